"""Certified epsilon-optimal solves of the convex subproblems.

Both subproblems (minimize the penalized majorant ``Q_c`` or the
infeasibility majorant ``Gamma`` over the base set) are epigraph-reduced
to a conic program with linear constraints and rotated second-order cones,
then handed to the Clarabel interior-point solver.  The reported objective
is re-evaluated exactly at the returned trajectory; the dual objective gives
the lower bound, and their difference is the certified gap.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import clarabel
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import lsqr

from .dc_expr import ConstraintSystem, LinearForm, reduce_batch
from .penalty import (
    BoxMode,
    PenaltyConfig,
    SubgradientBundle,
    effective_base_set,
    eval_Gamma,
    eval_Q,
    grid_for,
    penalized_box,
)
from .problem import ProblemSpec, X0Spec
from .transcription import DiscreteTrajectory, Grid, Layout

logger = logging.getLogger(__name__)


class Status(str, Enum):
    OPTIMAL = "optimal"
    EPS_OPTIMAL = "eps_optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE_BASE_SET = "infeasible_base_set"


class InfeasibleBaseSet(RuntimeError):
    """The affine equalities describing the base set are inconsistent."""

    status = Status.INFEASIBLE_BASE_SET


class UnboundedSubproblem(RuntimeError):
    """A majorant is unbounded below over the base set, so no minimizer exists."""


@dataclass
class SubproblemResult:
    traj: DiscreteTrajectory
    objective: float
    certified_gap: float
    status: Status
    lower_bound: float
    replaced_by_base: bool = False
    solver_iterations: int = 0


# ---------------------------------------------------------------------------
# assembly


class _Builder:
    """Decision variables and argument forms for one transcribed problem."""

    def __init__(self, spec: ProblemSpec, N: int):
        self.spec = spec
        self.grid = Grid(spec.T, N)
        self.layout = Layout(N, spec.n, spec.m)
        self.system = ConstraintSystem()
        self.system.new_vars(self.layout.size)
        self.objectives = {"omega": LinearForm.constant([0.0]), "gamma": LinearForm.constant([0.0])}
        j = np.arange(N)
        L = self.layout
        self.sample_args = [LinearForm.variables(L.x_index(j, i)) for i in range(spec.n)] + [
            LinearForm.variables(L.u_index(j, i)) for i in range(spec.m)
        ]
        self.end_args = [LinearForm.variables([L.x_index(0, i)]) for i in range(spec.n)] + [
            LinearForm.variables([L.x_index(N, i)]) for i in range(spec.n)
        ]

    def xdot(self, i: int) -> LinearForm:
        N, h = self.grid.N, self.grid.h
        j = np.arange(N)
        L = self.layout
        rows = np.concatenate([j, j])
        cols = np.concatenate([L.x_index(j + 1, i), L.x_index(j, i)])
        vals = np.concatenate([np.full(N, 1.0 / h), np.full(N, -1.0 / h)])
        return LinearForm(rows, cols, vals, np.zeros(N))

    def linear_in_samples(self, coeff: np.ndarray, args) -> LinearForm:
        """Row-wise ``<coeff_j, (x_j, u_j)>`` for a per-sample coefficient array."""
        out = LinearForm.constant(np.zeros(args[0].size))
        for i, a in enumerate(args):
            col = coeff[:, i] if coeff.ndim == 2 else np.full(args[0].size, coeff[i])
            if np.any(col):
                out = out + a.scaled(col)
        return out

    def reduce(self, expr, args) -> LinearForm:
        return reduce_batch(expr, args, self.system)

    def add_objective(self, form: LinearForm, weight: float = 1.0, part: str = "gamma") -> None:
        self.objectives[part] = self.objectives[part] + form.summed(np.full(form.size, weight))

    def hinge(self, *branches: LinearForm) -> LinearForm:
        """New epigraph variables above every branch (row-wise maximum)."""
        t = self.system.new_vars(branches[0].size)
        for b in branches:
            self.system.add_le(b - t)
        return t


def _add_base_set(b: _Builder, base_set: X0Spec) -> None:
    spec, L, N = b.spec, b.layout, b.grid.N
    for vec, node in ((base_set.fixed_initial, 0), (base_set.fixed_terminal, N)):
        if vec is None:
            continue
        for i, val in enumerate(np.asarray(vec, dtype=float)):
            if np.isfinite(val):
                b.system.add_eq(LinearForm.variables([L.x_index(node, i)]) + (-val))
    for i, rhs in sorted(base_set.linear_dynamics.items()):
        b.system.add_eq(b.xdot(i) - b.reduce(rhs, b.sample_args))
    if base_set.control_box is not None:
        lo, hi = (np.asarray(v, dtype=float) for v in base_set.control_box)
        for i in range(spec.m):
            u = b.sample_args[spec.n + i]
            if np.isfinite(hi[i]):
                b.system.add_le(u + (-hi[i]))
            if np.isfinite(lo[i]):
                b.system.add_le(-u + lo[i])


def _add_gamma(b: _Builder, bundle: SubgradientBundle, base: X0Spec, cfg: PenaltyConfig) -> None:
    weight = 1.0
    spec, h = b.spec, b.grid.h
    S0, E0 = bundle.base_samples, bundle.base_ends
    args, ends = b.sample_args, b.end_args
    lin_S0 = lambda coeff: np.einsum("kd,kd->k", coeff, S0)  # noqa: E731
    for i in spec.penalized_rows:
        f = spec.dynamics[i]
        W, V = bundle.dyn_W[i], bundle.dyn_V[i]
        xd = b.xdot(i)
        up = xd + b.reduce(f.concave, args) - b.linear_in_samples(W, args) + (lin_S0(W) - bundle.dyn_G_base[i])
        down = -xd + b.reduce(f.convex, args) - b.linear_in_samples(V, args) + (lin_S0(V) - bundle.dyn_H_base[i])
        b.add_objective(b.hinge(up, down), weight * h)
    zero1 = LinearForm.constant([0.0])
    for f, v, hb in zip(spec.endpoint_ineq, bundle.ineq_v, bundle.ineq_h_base):
        lin = b.linear_in_samples(v, ends)
        b.add_objective(b.hinge(zero1, b.reduce(f.convex, ends) - lin + (float(v @ E0) - hb)), weight)
    for f, v, w, g, hb in zip(spec.endpoint_eq, bundle.eq_v, bundle.eq_w, bundle.eq_g_base, bundle.eq_h_base):
        a = b.reduce(f.convex, ends) - b.linear_in_samples(v, ends) + (float(v @ E0) - hb)
        c = b.reduce(f.concave, ends) - b.linear_in_samples(w, ends) + (float(w @ E0) - g)
        b.add_objective(b.hinge(a, c), weight)
    zeroN = LinearForm.constant(np.zeros(b.grid.N))
    for f, z, q in zip(spec.mixed, bundle.mixed_z, bundle.mixed_q_base):
        lin = b.reduce(f.convex, args) - b.linear_in_samples(z, args) + (lin_S0(z) - q)
        b.add_objective(b.hinge(zeroN, lin), weight * h)
    bounds = penalized_box(base, cfg)
    if bounds is not None:
        lo, hi = bounds
        us = args[spec.n :]
        if cfg.control_box_mode is BoxMode.PENALIZE_L1:
            for i, u in enumerate(us):
                branches = [zeroN]
                if np.isfinite(hi[i]):
                    branches.append(u + (-hi[i]))
                if np.isfinite(lo[i]):
                    branches.append(-u + lo[i])
                b.add_objective(b.hinge(*branches), weight * h)
        else:
            t = b.system.new_vars(1)
            b.system.add_le(-t)
            tN = LinearForm(np.arange(b.grid.N), np.full(b.grid.N, t.cols[0]), np.ones(b.grid.N), np.zeros(b.grid.N))
            for i, u in enumerate(us):
                if np.isfinite(hi[i]):
                    b.system.add_le(u + (-hi[i]) - tN)
                if np.isfinite(lo[i]):
                    b.system.add_le(-u + lo[i] - tN)
            b.add_objective(t, weight)


def _add_omega(b: _Builder, bundle: SubgradientBundle) -> None:
    spec, h = b.spec, b.grid.h
    g = b.reduce(spec.running_cost.convex, b.sample_args) - b.linear_in_samples(bundle.V0, b.sample_args)
    b.add_objective(g, h, "omega")
    if spec.terminal_cost is not None:
        b.add_objective(b.reduce(spec.terminal_cost.convex, b.end_args), 1.0, "omega")
    b.add_objective(-b.linear_in_samples(bundle.v0, b.end_args), 1.0, "omega")


def build_program(
    spec: ProblemSpec,
    base_set: X0Spec,
    cfg: PenaltyConfig,
    bundle: SubgradientBundle,
    N: int,
    with_cost: bool = True,
) -> _Builder:
    """Epigraph program whose objectives ``omega`` and ``gamma`` combine to
    ``Q_c = omega + c * gamma``; without the cost part only ``Gamma`` is modelled."""
    b = _Builder(spec, N)
    _add_base_set(b, effective_base_set(base_set, cfg))
    if with_cost:
        _add_omega(b, bundle)
    _add_gamma(b, bundle, base_set, cfg)
    return b


# ---------------------------------------------------------------------------
# conic backend


@dataclass
class ConicProgram:
    """``min q'y + q0  s.t.  A y + s = b,  s in K`` in Clarabel's convention."""

    q: np.ndarray
    q0: float
    A: sp.csc_matrix
    b: np.ndarray
    n_eq: int
    n_ineq: int
    soc_dims: list


def _stack(forms, n_vars):
    if not forms:
        return sp.csr_matrix((0, n_vars)), np.zeros(0)
    rows, cols, vals, consts, off = [], [], [], [], 0
    for f in forms:
        rows.append(f.rows + off)
        cols.append(f.cols)
        vals.append(f.vals)
        consts.append(f.const)
        off += f.size
    M = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(off, n_vars)
    )
    return M, np.concatenate(consts)


def to_conic(system: ConstraintSystem, objective: LinearForm) -> ConicProgram:
    nv = system.n_vars
    q = np.zeros(nv)
    np.add.at(q, objective.cols, objective.vals)
    Aeq, ceq = _stack(system.equalities, nv)
    Ale, cle = _stack(system.inequalities, nv)
    blocks, rhs, soc_dims = [Aeq, Ale], [-ceq, -cle], []
    for t, parts in system.quadratic:
        r = len(parts)
        # (t + 1, t - 1, 2 a_1, ..., 2 a_r) in SOC  <=>  t >= sum a_i^2
        comps = [t + 1.0, t + (-1.0)] + [p.scaled(2.0) for p in parts]
        K = t.size
        rows, cols, vals = [], [], []
        consts = np.zeros(K * (r + 2))
        for slot, f in enumerate(comps):
            rows.append(f.rows * (r + 2) + slot)
            cols.append(f.cols)
            vals.append(f.vals)
            consts[slot :: r + 2] = f.const
        M = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(K * (r + 2), nv)
        )
        # s = b - A y must equal the component values
        blocks.append(-M)
        rhs.append(consts)
        soc_dims.extend([r + 2] * K)
    A = sp.vstack(blocks, format="csc")
    return ConicProgram(q, float(objective.const[0]), A, np.concatenate(rhs), Aeq.shape[0], Ale.shape[0], soc_dims)


def _cones(prog: ConicProgram):
    cones = []
    if prog.n_eq:
        cones.append(clarabel.ZeroConeT(prog.n_eq))
    if prog.n_ineq:
        cones.append(clarabel.NonnegativeConeT(prog.n_ineq))
    cones.extend(clarabel.SecondOrderConeT(d) for d in prog.soc_dims)
    return cones


@dataclass
class ConicSolution:
    y: np.ndarray
    primal: float
    dual: float
    status: str
    iterations: int


def solve_conic(prog: ConicProgram, tol: float, max_iter: int = 500) -> ConicSolution:
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = min(1e-9, tol)
    settings.max_threads = 1
    n = prog.q.shape[0]
    P = sp.csc_matrix((n, n))
    solver = clarabel.DefaultSolver(P, prog.q, prog.A, prog.b, _cones(prog), settings)
    sol = solver.solve()
    return ConicSolution(
        np.array(sol.x), sol.obj_val + prog.q0, sol.obj_val_dual + prog.q0, str(sol.status), int(sol.iterations)
    )


def dump_program(prog: ConicProgram, path) -> None:
    """Plain-text sparse dump: objective, constraint triplets, right-hand side, cones."""
    A = prog.A.tocoo()
    with open(path, "w") as fh:
        fh.write(f"# vars {prog.q.shape[0]} rows {prog.A.shape[0]} const {prog.q0!r}\n")
        for i in np.flatnonzero(prog.q):
            fh.write(f"q {i} {prog.q[i]!r}\n")
        for r, c, v in zip(A.row, A.col, A.data):
            fh.write(f"A {r} {c} {v!r}\n")
        for r in np.flatnonzero(prog.b):
            fh.write(f"b {r} {prog.b[r]!r}\n")
        fh.write(f"cone zero {prog.n_eq}\ncone nonneg {prog.n_ineq}\n")
        for d in prog.soc_dims:
            fh.write(f"cone soc {d}\n")


# ---------------------------------------------------------------------------
# base-set projection


def _project_qp(y0, A, c, lo_idx, lo, hi_idx, hi, tol):
    """Euclidean projection of ``y0`` onto ``{A y + c = 0, box}`` by a small QP."""
    n = y0.size
    eye = sp.identity(n, format="csc")
    Alo = -eye[lo_idx] if len(lo_idx) else sp.csc_matrix((0, n))
    Ahi = eye[hi_idx] if len(hi_idx) else sp.csc_matrix((0, n))
    M = sp.vstack([A, Ahi, Alo], format="csc")
    b = np.concatenate([-c, hi, -lo])
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_threads = 1
    settings.tol_gap_abs = settings.tol_gap_rel = 1e-12
    settings.tol_feas = min(1e-10, tol)
    cones = [clarabel.ZeroConeT(A.shape[0]), clarabel.NonnegativeConeT(len(hi_idx) + len(lo_idx))]
    sol = clarabel.DefaultSolver(eye, -y0, M, b, cones, settings).solve()
    if str(sol.status) in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        raise InfeasibleBaseSet("base set is empty")
    return np.array(sol.x)


def project_to_base_set(traj: DiscreteTrajectory, spec: ProblemSpec, base_set: X0Spec, tol: float = 1e-10):
    """Euclidean projection onto the base set.

    The affine equalities get a minimum-norm correction and the control box
    a clip; when the equalities involve controls and a box is present both
    are handled together by a small QP.  Raises :class:`InfeasibleBaseSet`
    if the set is empty.
    """
    b = _Builder(spec, traj.N)
    _add_base_set(b, base_set.without_box())
    L = b.layout
    y = traj.to_vector()
    A, c = _stack(b.system.equalities, L.size)
    u_cols = np.arange((traj.N + 1) * spec.n, L.size)
    box = base_set.control_box
    if box is not None and A.shape[0] and A[:, u_cols].nnz:
        lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), (traj.N, spec.m)).ravel() for v in box)
        if np.any(np.maximum(y[u_cols] - hi, lo - y[u_cols]) > tol) or np.max(np.abs(A @ y + c)) > tol:
            fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
            y = _project_qp(y, A, c, u_cols[fin_lo], lo[fin_lo], u_cols[fin_hi], hi[fin_hi], tol)
            y[u_cols] = np.clip(y[u_cols], lo, hi)
            resid = np.max(np.abs(A @ y + c), initial=0.0)
            if resid > 1e-6 * max(1.0, np.max(np.abs(c))):
                raise InfeasibleBaseSet(f"base set is empty (equality residual {resid:.3g})")
        return DiscreteTrajectory.from_vector(y, traj.N, spec.n, spec.m)
    if A.shape[0]:
        r = A @ y + c
        if np.max(np.abs(r), initial=0.0) > tol:
            y = y + lsqr(A, -r, atol=1e-15, btol=1e-15, iter_lim=50 * A.shape[1])[0]
            resid = np.max(np.abs(A @ y + c), initial=0.0)
            if resid > 1e-6 * max(1.0, np.max(np.abs(c))):
                raise InfeasibleBaseSet(f"base-set equalities are inconsistent (residual {resid:.3g})")
    out = DiscreteTrajectory.from_vector(y, traj.N, spec.n, spec.m)
    if box is not None:
        # the equalities do not involve controls, so clipping keeps them
        out.u = np.clip(out.u, *box)
    return out


def _extract(y, spec: ProblemSpec, N: int, base_set: X0Spec) -> DiscreteTrajectory:
    traj = DiscreteTrajectory.from_vector(y, N, spec.n, spec.m)
    return project_to_base_set(traj, spec, base_set, tol=1e-11)


def _solve(prog: ConicProgram, spec: ProblemSpec, N: int, eps: float, evaluate, base_set: X0Spec) -> SubproblemResult:
    tol = 0.1 * eps
    for _attempt in range(3):
        sol = solve_conic(prog, tol)
        if sol.status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            raise InfeasibleBaseSet("subproblem reported primal infeasibility: the base set is empty")
        if sol.status in ("DualInfeasible", "AlmostDualInfeasible"):
            raise UnboundedSubproblem("subproblem is unbounded below over the base set")
        traj = _extract(sol.y, spec, N, base_set)
        objective = evaluate(traj)
        lower = sol.dual if np.isfinite(sol.dual) else -np.inf
        gap = max(0.0, objective - lower)
        if gap <= eps:
            status = Status.OPTIMAL if sol.status == "Solved" else Status.EPS_OPTIMAL
            return SubproblemResult(traj, objective, gap, status, lower, solver_iterations=sol.iterations)
        logger.debug("solver gap %.3g exceeds eps %.3g (status %s); tightening", gap, eps, sol.status)
        tol *= 0.01
    logger.info("subproblem solved inaccurately: gap %.3g > eps %.3g (status %s)", gap, eps, sol.status)
    return SubproblemResult(traj, objective, gap, Status.MAX_ITER, lower, solver_iterations=sol.iterations)


class MajorantSolver:
    """Both subproblems at one base point.

    The constraint data do not depend on ``c``, so they are assembled once
    and reused while the penalty parameter is steered.
    """

    def __init__(
        self,
        base: DiscreteTrajectory,
        bundle: SubgradientBundle,
        spec: ProblemSpec,
        base_set: X0Spec,
        cfg: PenaltyConfig,
    ):
        grid_for(spec, base)
        self.base, self.bundle, self.spec, self.base_set, self.cfg = base, bundle, spec, base_set, cfg
        self.imposed = effective_base_set(base_set, cfg)
        b = build_program(spec, base_set, cfg, bundle, base.N)
        self._q_prog = to_conic(b.system, b.objectives["omega"])
        self._q_gamma = to_conic(b.system, b.objectives["gamma"])
        self._g_prog = None

    def program_Q(self, c: float) -> ConicProgram:
        p, g = self._q_prog, self._q_gamma
        return ConicProgram(p.q + c * g.q, p.q0 + c * g.q0, p.A, p.b, p.n_eq, p.n_ineq, p.soc_dims)

    def program_Gamma(self) -> ConicProgram:
        if self._g_prog is None:
            b = build_program(self.spec, self.base_set, self.cfg, self.bundle, self.base.N, with_cost=False)
            self._g_prog = to_conic(b.system, b.objectives["gamma"])
        return self._g_prog

    def Q(self, traj: DiscreteTrajectory, c: float) -> float:
        return eval_Q(traj, self.bundle, self.spec, self.base_set, self.cfg, c)

    def Gamma(self, traj: DiscreteTrajectory) -> float:
        return eval_Gamma(traj, self.bundle, self.spec, self.base_set, self.cfg)

    def solve_Q(self, c: float, eps: float = 1e-6) -> SubproblemResult:
        """Epsilon-optimal minimizer of ``Q_c(.; base; bundle)`` over the base set.

        A result whose majorant value exceeds the value at the base point is
        replaced by the base itself (``replaced_by_base`` is set): the base is
        then already epsilon-optimal for the subproblem.
        """
        if not c > 0 or not eps > 0:
            raise ValueError("c and eps must be positive")
        result = _solve(self.program_Q(c), self.spec, self.base.N, eps, lambda tr: self.Q(tr, c), self.imposed)
        q_base = self.Q(self.base, c)
        if result.objective > q_base:
            logger.debug("subproblem value %.12g above base value %.12g; keeping the base", result.objective, q_base)
            result.traj = self.base.copy()
            result.objective = q_base
            result.certified_gap = max(0.0, q_base - result.lower_bound)
            result.replaced_by_base = True
        return result

    def solve_Gamma(self, eps: float = 1e-6) -> SubproblemResult:
        """Epsilon-optimal minimizer of the infeasibility majorant over the base set."""
        if not eps > 0:
            raise ValueError("eps must be positive")
        result = _solve(self.program_Gamma(), self.spec, self.base.N, eps, self.Gamma, self.imposed)
        result.lower_bound = max(result.lower_bound, 0.0)
        result.certified_gap = max(0.0, result.objective - result.lower_bound)
        return result


def solve_Q(base, bundle, spec, base_set, cfg, c: float, eps: float = 1e-6) -> SubproblemResult:
    return MajorantSolver(base, bundle, spec, base_set, cfg).solve_Q(c, eps)


def solve_Gamma(base, bundle, spec, base_set, cfg, eps: float = 1e-6) -> SubproblemResult:
    return MajorantSolver(base, bundle, spec, base_set, cfg).solve_Gamma(eps)
