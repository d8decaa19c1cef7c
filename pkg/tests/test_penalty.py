import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bstepdca.penalty import (
    BoxMode,
    PenaltyConfig,
    box_violation_l1,
    box_violation_linf,
    collect_subgradients,
    eval_Gamma,
    eval_J,
    eval_Phi,
    eval_phi,
    eval_phi_inf,
    eval_Q,
)
from bstepdca.train import build_train_fully_penalized
from bstepdca.transcription import DiscreteTrajectory, Grid
from helpers import random_instance, random_traj, tiny_scalar_instance

seeds = st.integers(0, 2**32 - 1)


def test_fully_penalized_train_at_zero():
    spec, base, cfg = build_train_fully_penalized()
    z = DiscreteTrajectory.zeros(480, 2, 1)
    # only the terminal position constraint |x1(T) - 200| is violated
    assert eval_phi(z, spec, base, cfg) == pytest.approx(200.0, abs=1e-12)
    assert eval_J(z, spec) == 0.0
    assert eval_Phi(z, spec, base, cfg, 10.0) == pytest.approx(2000.0)


def test_box_violation_examples():
    lo, hi = np.array([-1.0, -np.inf]), np.array([1.0, 2.0])
    u = np.array([[2.0, 3.0], [-3.0, -100.0], [0.0, 0.0]])
    np.testing.assert_array_equal(box_violation_l1(u, lo, hi), [2.0, 2.0, 0.0])
    assert box_violation_linf(u, lo, hi) == 2.0


def test_linf_box_penalty_counts_only_the_worst_sample():
    spec, base, _, N = tiny_scalar_instance()
    u = np.zeros((N, 1))
    u[1] = 0.9
    u[2] = 0.7
    t = DiscreteTrajectory(np.ones((N + 1, 1)), u)
    l1 = PenaltyConfig(control_box_mode=BoxMode.PENALIZE_L1)
    linf = PenaltyConfig(control_box_mode=BoxMode.PENALIZE_LINF)
    inx0 = PenaltyConfig()
    h = Grid(spec.T, N).h
    assert eval_phi(t, spec, base, l1) - eval_phi(t, spec, base, inx0) == pytest.approx(h * (0.4 + 0.2))
    assert eval_phi(t, spec, base, linf) - eval_phi(t, spec, base, inx0) == pytest.approx(0.4)


def test_phi_bounded_by_group_sizes_times_phi_inf():
    rng = np.random.default_rng(1)
    for _ in range(20):
        spec, base, cfg, N = random_instance(rng)
        t = random_traj(rng, N, spec.n, spec.m)
        # each integrated group is at most T times its row count times its sup
        K = spec.T * (spec.n + len(spec.mixed) + spec.m) + len(spec.endpoint_ineq) + len(spec.endpoint_eq)
        assert eval_phi(t, spec, base, cfg) <= K * eval_phi_inf(t, spec, base, cfg) + 1e-9


def test_nonpositive_penalty_parameter_rejected():
    spec, base, cfg, N = tiny_scalar_instance()
    t = DiscreteTrajectory.zeros(N, 1, 1)
    with pytest.raises(ValueError):
        eval_Phi(t, spec, base, cfg, 0.0)


def _majorant_gaps(seed):
    rng = np.random.default_rng(seed)
    spec, base, cfg, N = random_instance(rng)
    b = random_traj(rng, N, spec.n, spec.m)
    x = random_traj(rng, N, spec.n, spec.m, scale=float(rng.uniform(0.1, 3)))
    bundle = collect_subgradients(b, spec)
    c = float(rng.uniform(0.5, 50))
    return spec, base, cfg, b, x, bundle, c


@given(seeds)
def test_Gamma_majorizes_phi_with_equality_at_base(seed):
    spec, base, cfg, b, x, bundle, _ = _majorant_gaps(seed)
    phi_x = eval_phi(x, spec, base, cfg)
    assert eval_Gamma(x, bundle, spec, base, cfg) >= phi_x - 1e-9 * max(1.0, abs(phi_x))
    phi_b = eval_phi(b, spec, base, cfg)
    assert eval_Gamma(b, bundle, spec, base, cfg) == pytest.approx(phi_b, rel=1e-12, abs=1e-10)


@given(seeds)
def test_Q_majorizes_Phi_with_equality_at_base(seed):
    spec, base, cfg, b, x, bundle, c = _majorant_gaps(seed)
    Phi_x = eval_Phi(x, spec, base, cfg, c)
    Qx = eval_Q(x, bundle, spec, base, cfg, c) - bundle.correction
    assert Qx >= Phi_x - 1e-9 * max(1.0, abs(Phi_x))
    Phi_b = eval_Phi(b, spec, base, cfg, c)
    Qb = eval_Q(b, bundle, spec, base, cfg, c) - bundle.correction
    assert Qb == pytest.approx(Phi_b, rel=1e-11, abs=1e-9)


@given(seeds)
def test_Q_is_affine_in_c(seed):
    spec, base, cfg, b, x, bundle, c = _majorant_gaps(seed)
    q1 = eval_Q(x, bundle, spec, base, cfg, c)
    q2 = eval_Q(x, bundle, spec, base, cfg, 2 * c)
    G = eval_Gamma(x, bundle, spec, base, cfg)
    assert q2 - q1 == pytest.approx(c * G, rel=1e-9, abs=1e-9)


@given(seeds)
def test_Q_is_convex_along_segments(seed):
    spec, base, cfg, b, x, bundle, c = _majorant_gaps(seed)
    rng = np.random.default_rng(seed + 1)
    y = random_traj(rng, x.N, spec.n, spec.m)
    lam = float(rng.uniform())
    mid = lam * x + (1 - lam) * y
    lhs = eval_Q(mid, bundle, spec, base, cfg, c)
    rhs = lam * eval_Q(x, bundle, spec, base, cfg, c) + (1 - lam) * eval_Q(y, bundle, spec, base, cfg, c)
    assert lhs <= rhs + 1e-9 * max(1.0, abs(rhs))


def test_box_mode_accepts_strings():
    assert PenaltyConfig(control_box_mode="penalize_Linf").control_box_mode is BoxMode.PENALIZE_LINF


@pytest.mark.parametrize("field,value", [("c0", 0.0), ("rho", 1.0), ("c_max", 1.0)])
def test_invalid_penalty_config(field, value):
    with pytest.raises(ValueError):
        dataclasses.replace(PenaltyConfig(), **{field: value})
