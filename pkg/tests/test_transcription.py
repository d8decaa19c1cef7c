import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bstepdca.transcription import (
    DiscreteTrajectory,
    Grid,
    Layout,
    forward_diff,
    l2_norm_sq,
    riemann_sum,
    trajectory_from_csv,
    trajectory_to_csv,
)


def test_grid_step():
    g = Grid(48.0, 480)
    assert g.h == pytest.approx(0.1)
    assert g.nodes[-1] == pytest.approx(48.0)


@pytest.mark.parametrize("N", [0, 1])
def test_grid_needs_two_subintervals(N):
    with pytest.raises(ValueError):
        Grid(1.0, N)


def test_grid_needs_positive_horizon():
    with pytest.raises(ValueError):
        Grid(0.0, 4)


def test_trajectory_shapes_checked():
    with pytest.raises(ValueError):
        DiscreteTrajectory(np.zeros((4, 1)), np.zeros((4, 1)))


def test_forward_difference_of_linear_state_is_exact():
    g = Grid(2.0, 5)
    x = (3.0 * g.nodes + 1.0)[:, None]
    d = forward_diff(DiscreteTrajectory(x, np.zeros((5, 1))), g)
    np.testing.assert_allclose(d, 3.0)


def test_riemann_sum_uses_left_samples():
    g = Grid(1.0, 4)
    assert riemann_sum(g.nodes[:-1], g) == pytest.approx(0.25 * (0 + 0.25 + 0.5 + 0.75))
    with pytest.raises(ValueError):
        riemann_sum(np.ones(5), g)


def test_l2_norm_ignores_last_state_node():
    g = Grid(1.0, 2)
    x = np.array([[1.0], [2.0], [100.0]])
    u = np.array([[3.0], [4.0]])
    assert l2_norm_sq(DiscreteTrajectory(x, u), g) == pytest.approx(0.5 * (1 + 4 + 9 + 16))


@given(st.integers(2, 12), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31))
def test_vector_layout_round_trip(N, n, m, seed):
    rng = np.random.default_rng(seed)
    t = DiscreteTrajectory(rng.normal(size=(N + 1, n)), rng.normal(size=(N, m)))
    y = t.to_vector()
    lay = Layout(N, n, m)
    assert y.size == lay.size
    j, i = int(rng.integers(0, N + 1)), int(rng.integers(0, n))
    assert y[lay.x_index(j, i)] == t.x[j, i]
    j, i = int(rng.integers(0, N)), int(rng.integers(0, m))
    assert y[lay.u_index(j, i)] == t.u[j, i]
    assert DiscreteTrajectory.from_vector(y, N, n, m).allclose(t)


@given(st.integers(2, 10), st.integers(0, 2**31))
def test_csv_round_trip_is_bit_exact(N, seed):
    rng = np.random.default_rng(seed)
    g = Grid(float(rng.uniform(0.1, 10)), N)
    t = DiscreteTrajectory(rng.normal(size=(N + 1, 2)), rng.normal(size=(N, 1)))
    nodes, back = trajectory_from_csv(trajectory_to_csv(t, g))
    np.testing.assert_array_equal(nodes, g.nodes)
    np.testing.assert_array_equal(back.x, t.x)
    np.testing.assert_array_equal(back.u, t.u)


def test_arithmetic():
    a = DiscreteTrajectory(np.ones((3, 1)), np.ones((2, 1)))
    b = 2.0 * a - a + a
    np.testing.assert_array_equal(b.x, 2.0)
    np.testing.assert_array_equal(b.u, 2.0)
