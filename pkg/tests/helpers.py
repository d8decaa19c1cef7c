"""Random instance generators and small hand-built problems shared by the tests."""

from __future__ import annotations

import numpy as np

from bstepdca.dc_expr import (
    DCPair,
    affine,
    maximum,
    pos,
    scale,
    sqnorm,
    square,
    total,
    zero,
)
from bstepdca.penalty import BoxMode, PenaltyConfig
from bstepdca.problem import ProblemSpec, X0Spec
from bstepdca.transcription import DiscreteTrajectory


def random_affine(rng, d, table_rows=None):
    if table_rows is None:
        return affine(rng.normal(size=d), float(rng.normal()))
    return affine(rng.normal(size=(table_rows, d)), rng.normal(size=table_rows))


def random_expr(rng, d, depth=3, table_rows=None):
    """Random convex PLQ tree of arity ``d``."""
    if depth <= 0:
        return random_affine(rng, d, table_rows)
    kind = rng.integers(0, 7)
    sub = lambda: random_expr(rng, d, depth - 1, table_rows)  # noqa: E731
    if kind == 0:
        return random_affine(rng, d, table_rows)
    if kind == 1:
        return maximum(*[sub() for _ in range(rng.integers(2, 4))])
    if kind == 2:
        return pos(sub())
    if kind == 3:
        return square(pos(sub()))
    if kind == 4:
        return scale(float(rng.uniform(0, 2)), sub())
    if kind == 5:
        return total(*[sub() for _ in range(rng.integers(2, 4))])
    return sqnorm(random_affine(rng, d, table_rows), pos(sub()))


def random_pair(rng, d, depth=2, table_rows=None):
    return DCPair(random_expr(rng, d, depth, table_rows), random_expr(rng, d, depth, table_rows))


def random_instance(rng, N=None):
    """A small random problem with every constraint group exercised at random.

    Returns ``(spec, base_set, pcfg, N)``.
    """
    n = int(rng.integers(1, 3))
    m = int(rng.integers(1, 3))
    N = int(N or rng.integers(3, 7))
    d, e = n + m, 2 * n
    tables = N if rng.random() < 0.3 else None
    linear_rows = {}
    dynamics = []
    for i in range(n):
        if rng.random() < 0.3:
            linear_rows[i] = random_affine(rng, d)
            dynamics.append(None)
        else:
            dynamics.append(random_pair(rng, d, table_rows=tables))
    spec = ProblemSpec(
        n=n,
        m=m,
        T=float(rng.uniform(0.5, 3.0)),
        running_cost=random_pair(rng, d, table_rows=tables),
        dynamics=tuple(dynamics),
        terminal_cost=random_pair(rng, e) if rng.random() < 0.5 else None,
        endpoint_ineq=tuple(random_pair(rng, e) for _ in range(rng.integers(0, 3))),
        endpoint_eq=tuple(random_pair(rng, e) for _ in range(rng.integers(0, 2))),
        mixed=tuple(random_pair(rng, d, table_rows=tables) for _ in range(rng.integers(0, 3))),
        name="random",
    )
    box = None
    if rng.random() < 0.6:
        lo = -rng.uniform(0.5, 2.0, size=m)
        hi = rng.uniform(0.5, 2.0, size=m)
        if rng.random() < 0.3:
            hi[0] = np.inf
        box = (lo, hi)
    fixed0 = rng.normal(size=n) if rng.random() < 0.5 else None
    if fixed0 is not None and n > 1 and rng.random() < 0.5:
        fixed0[1] = np.nan
    base = X0Spec(fixed_initial=fixed0, linear_dynamics=linear_rows, control_box=box)
    mode = [BoxMode.IN_X0, BoxMode.PENALIZE_L1, BoxMode.PENALIZE_LINF][int(rng.integers(0, 3))]
    return spec, base, PenaltyConfig(control_box_mode=mode), N


def random_traj(rng, N, n, m, scale=1.0):
    return DiscreteTrajectory(scale * rng.normal(size=(N + 1, n)), scale * rng.normal(size=(N, m)))


# ---------------------------------------------------------------------------
# hand-built scalar instances (variables ordered (x, u); endpoints (x(0), x(T)))

_X, _U = np.eye(2)


def tiny_scalar_instance():
    """Scalar state and control, ``N = 4``: nonconvex drag, an unreachable
    terminal target (so the optimal infeasibility is positive) and a control
    box in the base set."""
    spec = ProblemSpec(
        n=1,
        m=1,
        T=1.0,
        running_cost=DCPair(square(pos(affine(_X))), sqnorm(affine(_U))),
        dynamics=(DCPair(total(affine(_U), square(pos(affine(-_X)))), square(pos(affine(_X)))),),
        endpoint_ineq=(DCPair(affine([0.0, -1.0], 3.0), zero(2)),),
        name="tiny",
    )
    base = X0Spec(fixed_initial=np.array([1.0]), control_box=(np.array([-0.5]), np.array([0.5])))
    return spec, base, PenaltyConfig(), 4


def two_node_instance():
    """``N = 2`` scalar instance with both endpoints fixed; free variables are
    ``x_1, u_0, u_1``.  Cost ``[x]_+^2 - |u|``, dynamics ``x' = u - [x]_+``."""
    spec = ProblemSpec(
        n=1,
        m=1,
        T=1.0,
        running_cost=DCPair(square(pos(affine(_X))), maximum(affine(_U), affine(-_U))),
        dynamics=(DCPair(affine(_U), pos(affine(_X))),),
        name="two_node",
    )
    base = X0Spec(
        fixed_initial=np.array([0.0]),
        fixed_terminal=np.array([0.5]),
        control_box=(np.array([-1.0]), np.array([1.0])),
    )
    return spec, base, PenaltyConfig(), 2


def two_node_Q(x1, u0, u1, base: DiscreteTrajectory, c: float):
    """Independent closed-form evaluation of the penalized majorant for
    :func:`two_node_instance` at a batch of free-variable values."""
    h = 0.5
    xs = [np.zeros_like(x1), x1]
    xe = np.full_like(x1, 0.5)
    us = [u0, u1]
    nodes = [xs[0], xs[1], xe]
    total_val = 0.0
    for j in range(2):
        xb, ub = base.x[j, 0], base.u[j, 0]
        # subgradient of |u| at base: lowest index wins ties, so u >= 0 -> +1
        su = 1.0 if ub >= 0 else -1.0
        omega = np.maximum(xs[j], 0.0) ** 2 - su * us[j]
        xdot = (nodes[j + 1] - nodes[j]) / h
        # G = u (gradient (0, 1)), H = [x]_+ (subgradient 1 if x > 0 else 0)
        sh = 1.0 if xb > 0 else 0.0
        up = xdot + np.maximum(xs[j], 0.0) - ub - (us[j] - ub)
        down = -xdot + us[j] - max(xb, 0.0) - sh * (xs[j] - xb)
        total_val = total_val + h * (omega + c * np.maximum(up, down))
    return total_val


def lq_toy():
    """Convex LQ problem: ``x' = u`` in the base set, ``x(0) = 1``, cost
    ``x^2 + u^2``; no penalized constraints."""
    spec = ProblemSpec(
        n=1,
        m=1,
        T=1.0,
        running_cost=DCPair(sqnorm(affine(_X), affine(_U)), zero(2)),
        dynamics=(None,),
        name="lq",
    )
    base = X0Spec(fixed_initial=np.array([1.0]), linear_dynamics={0: affine(_U)})
    return spec, base, PenaltyConfig()


def lq_toy_optimum(N: int):
    """Exact discrete optimum via the KKT system (independent of the solver)."""
    h = 1.0 / N
    # variables x_1..x_N, u_0..u_{N-1}; x_0 = 1; x_{j+1} = x_j + h u_j
    nv = 2 * N
    H = np.zeros((nv, nv))
    g = np.zeros(nv)
    for j in range(N):
        # x_j^2 term for j >= 1 (x_0 is fixed and contributes h)
        if j >= 1:
            H[j - 1, j - 1] += 2 * h
        H[N + j, N + j] += 2 * h
    A = np.zeros((N, nv))
    b = np.zeros(N)
    for j in range(N):
        A[j, j] = 1.0
        if j >= 1:
            A[j, j - 1] = -1.0
        else:
            b[j] = 1.0
        A[j, N + j] = -h
    K = np.block([[H, A.T], [A, np.zeros((N, N))]])
    sol = np.linalg.solve(K, np.concatenate([-g, b]))
    z = sol[:nv]
    return 0.5 * z @ H @ z + h * 1.0, z
