"""Exact penalty machinery on transcribed trajectories.

Everything here is a plain numerical evaluation: the penalty term and
penalty function of the original problem, and the convex majorants built
from a linearization (:class:`SubgradientBundle`) of the concave parts at
a base trajectory.  The subproblem solver reduces exactly the same terms.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dc_expr import eval_batch, evaluate, subgradient, value_and_subgradient_batch
from .problem import ProblemSpec, X0Spec
from .transcription import DiscreteTrajectory, Grid, forward_diff, riemann_sum


class BoxMode(str, Enum):
    IN_X0 = "in_X0"
    PENALIZE_L1 = "penalize_L1"
    PENALIZE_LINF = "penalize_Linf"


@dataclass(frozen=True)
class PenaltyConfig:
    control_box_mode: BoxMode = BoxMode.IN_X0
    c0: float = 10.0
    c_max: float = 1e6
    rho: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "control_box_mode", BoxMode(self.control_box_mode))
        if not self.c0 > 0:
            raise ValueError("c0 must be positive")
        if not self.c_max >= self.c0:
            raise ValueError("c_max must be >= c0")
        if not self.rho > 1:
            raise ValueError("rho must exceed 1")


def effective_base_set(base: X0Spec, cfg: PenaltyConfig) -> X0Spec:
    """The base set actually imposed: a penalized control box is dropped from it."""
    if cfg.control_box_mode is BoxMode.IN_X0:
        return base
    return base.without_box()


def penalized_box(base: X0Spec, cfg: PenaltyConfig):
    """Bounds of the control box when it is penalized, else ``None``."""
    if cfg.control_box_mode is BoxMode.IN_X0 or base.control_box is None:
        return None
    lo, hi = base.control_box
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


def grid_for(spec: ProblemSpec, traj: DiscreteTrajectory) -> Grid:
    rows = spec.table_rows
    if rows is not None and rows != traj.N:
        raise ValueError(f"problem coefficient tables have {rows} rows but the trajectory has N={traj.N}")
    return Grid(spec.T, traj.N)


# ---------------------------------------------------------------------------
# control box penalty


def box_violation_l1(u: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Per-sample ``sum_i max{u_i - hi_i, 0, lo_i - u_i}``."""
    with np.errstate(invalid="ignore"):
        viol = np.maximum(np.maximum(u - hi, 0.0), lo - u)
    return np.nansum(np.where(np.isfinite(viol), viol, 0.0), axis=1)


def box_violation_linf(u: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """``max{0, max_j max_i (u_ji - hi_i), max_j max_i (lo_i - u_ji)}``."""
    viol = np.maximum(u - hi, lo - u)
    viol = viol[np.isfinite(viol)]
    return float(max(0.0, viol.max())) if viol.size else 0.0


def box_term(traj: DiscreteTrajectory, base: X0Spec, cfg: PenaltyConfig, grid: Grid) -> float:
    bounds = penalized_box(base, cfg)
    if bounds is None:
        return 0.0
    lo, hi = bounds
    if cfg.control_box_mode is BoxMode.PENALIZE_L1:
        return riemann_sum(box_violation_l1(traj.u, lo, hi), grid)
    return box_violation_linf(traj.u, lo, hi)


# ---------------------------------------------------------------------------
# original-problem quantities


def eval_J(traj: DiscreteTrajectory, spec: ProblemSpec) -> float:
    grid = grid_for(spec, traj)
    J = riemann_sum(spec.running_cost.values(traj.samples()), grid)
    if spec.terminal_cost is not None:
        J += spec.terminal_cost.value(traj.endpoints())
    return J


def dynamics_residuals(traj: DiscreteTrajectory, spec: ProblemSpec, grid: Grid) -> np.ndarray:
    """``(N, n)`` array ``x' - F(x, u)``; rows handled by the base set are zero."""
    xdot = forward_diff(traj, grid)
    S = traj.samples()
    res = np.zeros_like(xdot)
    for i in spec.penalized_rows:
        res[:, i] = xdot[:, i] - spec.dynamics[i].values(S)
    return res


def eval_phi(traj: DiscreteTrajectory, spec: ProblemSpec, base: X0Spec, cfg: PenaltyConfig) -> float:
    """L1 penalty term (control box per ``cfg``)."""
    grid = grid_for(spec, traj)
    S, E = traj.samples(), traj.endpoints()
    total = riemann_sum(np.abs(dynamics_residuals(traj, spec, grid)).sum(axis=1), grid)
    for f in spec.endpoint_ineq:
        total += max(0.0, f.value(E))
    for f in spec.endpoint_eq:
        total += abs(f.value(E))
    for f in spec.mixed:
        total += riemann_sum(np.maximum(0.0, f.values(S)), grid)
    return total + box_term(traj, base, cfg, grid)


def eval_phi_inf(traj: DiscreteTrajectory, spec: ProblemSpec, base: X0Spec, cfg: PenaltyConfig) -> float:
    """Pure L-infinity penalty term (every constraint group by its worst violation)."""
    grid = grid_for(spec, traj)
    S, E = traj.samples(), traj.endpoints()
    res = np.abs(dynamics_residuals(traj, spec, grid))
    total = float(res.max()) if res.size else 0.0
    total += max([0.0] + [f.value(E) for f in spec.endpoint_ineq])
    total += max([0.0] + [abs(f.value(E)) for f in spec.endpoint_eq])
    mixed = [np.max(f.values(S)) for f in spec.mixed]
    total += max([0.0] + mixed)
    bounds = penalized_box(base, cfg)
    if bounds is not None:
        total += box_violation_linf(traj.u, *bounds)
    return total


def eval_Phi(traj: DiscreteTrajectory, spec: ProblemSpec, base: X0Spec, cfg: PenaltyConfig, c: float) -> float:
    if not c > 0:
        raise ValueError("penalty parameter must be positive")
    return eval_J(traj, spec) + c * eval_phi(traj, spec, base, cfg)


# ---------------------------------------------------------------------------
# linearization at a base point


@dataclass(frozen=True)
class SubgradientBundle:
    """Subgradients of the subtracted convex parts (and of the convex parts of
    dynamics / equality constraints) at a base trajectory, plus the base values
    every majorant needs.

    Per-sample arrays have shape ``(N, n+m)``; endpoint vectors have length ``2n``.
    Dictionaries are keyed by dynamics row / constraint index.
    """

    base_samples: np.ndarray
    base_ends: np.ndarray
    V0: np.ndarray
    H0_base: np.ndarray
    v0: np.ndarray
    h0_base: float
    dyn_V: dict
    dyn_W: dict
    dyn_G_base: dict
    dyn_H_base: dict
    ineq_v: tuple
    ineq_h_base: tuple
    eq_v: tuple
    eq_w: tuple
    eq_g_base: tuple
    eq_h_base: tuple
    mixed_z: tuple
    mixed_q_base: tuple
    correction: float


def collect_subgradients(base: DiscreteTrajectory, spec: ProblemSpec) -> SubgradientBundle:
    grid = grid_for(spec, base)
    S, E = base.samples(), base.endpoints()
    H0, V0 = value_and_subgradient_batch(spec.running_cost.concave, S)
    if spec.terminal_cost is not None:
        h0 = evaluate(spec.terminal_cost.concave, E)
        v0 = subgradient(spec.terminal_cost.concave, E)
    else:
        h0, v0 = 0.0, np.zeros(2 * spec.n)
    dyn_V, dyn_W, dyn_G, dyn_H = {}, {}, {}, {}
    for i in spec.penalized_rows:
        f = spec.dynamics[i]
        dyn_H[i], dyn_V[i] = value_and_subgradient_batch(f.concave, S)
        dyn_G[i], dyn_W[i] = value_and_subgradient_batch(f.convex, S)
    ineq_v = tuple(subgradient(f.concave, E) for f in spec.endpoint_ineq)
    ineq_h = tuple(evaluate(f.concave, E) for f in spec.endpoint_ineq)
    eq_v = tuple(subgradient(f.concave, E) for f in spec.endpoint_eq)
    eq_w = tuple(subgradient(f.convex, E) for f in spec.endpoint_eq)
    eq_g = tuple(evaluate(f.convex, E) for f in spec.endpoint_eq)
    eq_h = tuple(evaluate(f.concave, E) for f in spec.endpoint_eq)
    mixed = [value_and_subgradient_batch(f.concave, S) for f in spec.mixed]
    correction = riemann_sum(H0 - np.einsum("kd,kd->k", V0, S), grid) + h0 - float(v0 @ E)
    return SubgradientBundle(
        base_samples=S,
        base_ends=E,
        V0=V0,
        H0_base=H0,
        v0=v0,
        h0_base=h0,
        dyn_V=dyn_V,
        dyn_W=dyn_W,
        dyn_G_base=dyn_G,
        dyn_H_base=dyn_H,
        ineq_v=ineq_v,
        ineq_h_base=ineq_h,
        eq_v=eq_v,
        eq_w=eq_w,
        eq_g_base=eq_g,
        eq_h_base=eq_h,
        mixed_z=tuple(z for _, z in mixed),
        mixed_q_base=tuple(q for q, _ in mixed),
        correction=correction,
    )


def _rowdot(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.einsum("kd,kd->k", A, B)


def eval_omega(traj: DiscreteTrajectory, bundle: SubgradientBundle, spec: ProblemSpec) -> float:
    """Convexified cost: convex parts minus the linearized concave parts (no constant)."""
    grid = grid_for(spec, traj)
    S, E = traj.samples(), traj.endpoints()
    val = riemann_sum(eval_batch(spec.running_cost.convex, S) - _rowdot(bundle.V0, S), grid)
    if spec.terminal_cost is not None:
        val += evaluate(spec.terminal_cost.convex, E)
    return val - float(bundle.v0 @ E)


def eval_Gamma(
    traj: DiscreteTrajectory, bundle: SubgradientBundle, spec: ProblemSpec, base: X0Spec, cfg: PenaltyConfig
) -> float:
    """Infeasibility majorant: the penalty term with every concave part linearized."""
    grid = grid_for(spec, traj)
    S, E = traj.samples(), traj.endpoints()
    dS, dE = S - bundle.base_samples, E - bundle.base_ends
    xdot = forward_diff(traj, grid)
    total = 0.0
    for i in spec.penalized_rows:
        f = spec.dynamics[i]
        up = xdot[:, i] + eval_batch(f.concave, S) - bundle.dyn_G_base[i] - _rowdot(bundle.dyn_W[i], dS)
        down = -xdot[:, i] + eval_batch(f.convex, S) - bundle.dyn_H_base[i] - _rowdot(bundle.dyn_V[i], dS)
        total += riemann_sum(np.maximum(up, down), grid)
    for f, v, h in zip(spec.endpoint_ineq, bundle.ineq_v, bundle.ineq_h_base):
        total += max(0.0, evaluate(f.convex, E) - h - float(v @ dE))
    for f, v, w, g, h in zip(spec.endpoint_eq, bundle.eq_v, bundle.eq_w, bundle.eq_g_base, bundle.eq_h_base):
        total += max(evaluate(f.convex, E) - h - float(v @ dE), evaluate(f.concave, E) - g - float(w @ dE))
    for f, z, q in zip(spec.mixed, bundle.mixed_z, bundle.mixed_q_base):
        total += riemann_sum(np.maximum(0.0, eval_batch(f.convex, S) - q - _rowdot(z, dS)), grid)
    return total + box_term(traj, base, cfg, grid)


def eval_Q(
    traj: DiscreteTrajectory,
    bundle: SubgradientBundle,
    spec: ProblemSpec,
    base: X0Spec,
    cfg: PenaltyConfig,
    c: float,
) -> float:
    if not c > 0:
        raise ValueError("penalty parameter must be positive")
    return eval_omega(traj, bundle, spec) + c * eval_Gamma(traj, bundle, spec, base, cfg)
