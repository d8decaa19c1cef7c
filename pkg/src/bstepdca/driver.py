"""Outer loop: steered exact-penalty DCA with a boosting line search.

Each outer iteration linearizes the concave parts at the current point,
solves the convex majorant subproblem, raises the penalty parameter while
the steering tests fail, and then tries to extrapolate along the step
direction with a nonmonotone line search.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .penalty import (
    PenaltyConfig,
    collect_subgradients,
    effective_base_set,
    eval_J,
    eval_Phi,
    eval_phi,
    grid_for,
)
from .problem import ProblemSpec, X0Spec, line_search_admissible
from .subsolver import MajorantSolver, project_to_base_set
from .transcription import DiscreteTrajectory, l2_norm_sq

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# strategies


@dataclass(frozen=True)
class NuSequence:
    """Prescribed summable sequence; past its end the last value keeps halving."""

    values: tuple

    def __post_init__(self):
        if not self.values or any(not v > 0 for v in self.values):
            raise ValueError("the nu sequence must be non-empty and positive")


@dataclass(frozen=True)
class NuAdaptive:
    """Largest admissible value (times 0.99) given the last realized decrease."""

    delta_min: float
    nu0: float = 0.1

    def __post_init__(self):
        if not 0 < self.delta_min < 1:
            raise ValueError("delta_min must lie in (0, 1)")
        if not self.nu0 > 0:
            raise ValueError("nu0 must be positive")


@dataclass(frozen=True)
class NuStepScaled:
    """``nu_k = gamma0 / (k + 1) * rho_k**2``."""

    gamma0: float = 0.1

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError("gamma0 must be positive")


@dataclass(frozen=True)
class ConstantStep:
    alpha: float = 0.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("trial step must be nonnegative")


@dataclass(frozen=True)
class PreviousStep:
    alpha0: float = 1.0


@dataclass(frozen=True)
class AdaptiveStep:
    """Scale the previous step by ``gamma`` after two unreduced acceptances."""

    gamma: float = 0.5
    alpha0: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.alpha0 < 0:
            raise ValueError("alpha0 must be nonnegative")


def choose_nu(strategy, k: int, rho: float, history: Sequence["IterationRecord"] = ()) -> tuple[float, bool]:
    """Return ``(nu_k, flagged)``; ``flagged`` marks the adaptive fallback."""
    if isinstance(strategy, NuSequence):
        vals = strategy.values
        if k < len(vals):
            return float(vals[k]), False
        return float(vals[-1]) * 0.5 ** (k - len(vals) + 1), False
    if isinstance(strategy, NuStepScaled):
        return strategy.gamma0 / (k + 1) * rho**2, False
    if isinstance(strategy, NuAdaptive):
        if not history:
            return strategy.nu0, False
        prev = history[-1]
        bracket = prev.Phi_base - prev.Phi + prev.nu
        if bracket <= 0:
            return 0.5 * prev.nu, True
        return 0.99 * (1 - strategy.delta_min) * bracket, False
    raise TypeError(f"unknown nu strategy {strategy!r}")


def choose_trial_step(strategy, history: Sequence[tuple[float, float]]) -> float:
    """``history`` holds ``(alpha_bar, alpha)`` of past iterations, oldest first."""
    if isinstance(strategy, ConstantStep):
        return strategy.alpha
    if not history:
        return strategy.alpha0
    last = history[-1][1]
    if isinstance(strategy, PreviousStep):
        return last
    if isinstance(strategy, AdaptiveStep):
        if len(history) >= 2 and all(ab == a for ab, a in history[-2:]):
            return strategy.gamma * last
        return last
    raise TypeError(f"unknown trial-step strategy {strategy!r}")


class Stopping(int, Enum):
    CRITERION1 = 1
    CRITERION2 = 2


def check_stopping(
    criterion: Stopping,
    *,
    Phi_next: float,
    Phi_base: float,
    phi_next: float,
    Q_base: float,
    Q_cand: float,
    Gamma_cand: float,
    rho: float,
    eps_f: float,
    eps_phi: float,
    eps_x: float | None = None,
) -> bool:
    if Stopping(criterion) is Stopping.CRITERION1:
        ok = abs(Phi_next - Phi_base) < eps_f and phi_next < eps_phi
        if eps_x is not None:
            ok = ok and rho < eps_x
        return ok
    return Q_base - Q_cand < eps_f and Gamma_cand < eps_phi


@dataclass(frozen=True)
class SolverConfig:
    eta1: float = 0.1
    eta2: float = 0.1
    zeta: float = 0.5
    sigma: float = 0.1
    eps_phi: float = 0.1
    eps_feas: float = 0.01
    eps_f: float = 1e-3
    eps_x: float | None = None
    eps_sub: float = 1e-6
    eps_sub_factor: float = 1.0
    nu_strategy: object = field(default_factory=NuStepScaled)
    trial_step: object = field(default_factory=ConstantStep)
    stopping: Stopping = Stopping.CRITERION1
    max_outer_iters: int = 500
    line_search_max_j: int = 60
    check_assumption5: bool = False

    def __post_init__(self):
        object.__setattr__(self, "stopping", Stopping(self.stopping))
        for name in ("eta1", "eta2", "zeta", "sigma"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        for name in ("eps_phi", "eps_feas", "eps_f", "eps_sub"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.eps_sub_factor <= 1:
            raise ValueError("eps_sub_factor must lie in (0, 1]")
        if self.eps_x is not None and not self.eps_x > 0:
            raise ValueError("eps_x must be positive when given")
        if self.max_outer_iters < 1 or self.line_search_max_j < 0:
            raise ValueError("iteration caps must be positive")


# ---------------------------------------------------------------------------
# records


@dataclass
class IterationRecord:
    k: int
    c_k: float
    c_next: float
    Phi: float
    J: float
    phi: float
    Gamma_base: float
    Gamma_cand: float
    Q_base: float
    Q_cand: float
    Phi_base: float
    Phi_cand: float
    rho: float
    alpha_bar: float
    alpha: float
    j: int
    nu: float
    nu_flagged: bool
    inner_Q_solves: int
    Gamma_solves: int
    step2_executed: bool
    step3_executed: bool
    penalty_term_critical_event: bool
    assumption2_triggered: bool
    line_search_capped: bool
    max_certified_gap: float
    statuses: str


RECORD_COLUMNS = [f.name for f in IterationRecord.__dataclass_fields__.values()]


class Termination(str, Enum):
    CONVERGED = "converged"
    C_MAX_HIT = "c_max_hit"
    MAX_ITERS = "max_iters"
    ASSUMPTION2_CRITICAL = "assumption2_critical"


@dataclass
class RunSummary:
    termination: Termination
    traj: DiscreteTrajectory
    last_base: DiscreteTrajectory
    c: float
    J: float
    phi: float
    iterations: int
    penalty_increases: int
    total_inner_solves: int
    wall_time: float
    records: list = field(default_factory=list)

    def to_dict(self) -> dict:
        """JSON-ready summary; wall time is left out so repeated runs compare equal."""
        return {
            "termination": self.termination.value,
            "iterations": self.iterations,
            "final_c": self.c,
            "J": self.J,
            "phi": self.phi,
            "penalty_increases": self.penalty_increases,
            "total_inner_solves": self.total_inner_solves,
        }


class NonFinitePenalty(FloatingPointError):
    pass


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_to_csv(records: Sequence[IterationRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) for c in RECORD_COLUMNS])
    return buf.getvalue()


def summary_to_json(summary: RunSummary) -> str:
    return json.dumps(summary.to_dict(), indent=1, sort_keys=True) + "\n"


def steering_bound(pcfg: PenaltyConfig) -> int:
    """Maximal number of majorant solves in one outer iteration."""
    return math.ceil(math.log(pcfg.c_max / pcfg.c0, pcfg.rho) - 1e-12) + 2


# ---------------------------------------------------------------------------
# main loop


class _CMaxHit(Exception):
    pass


def run(
    spec: ProblemSpec,
    base_set: X0Spec,
    pcfg: PenaltyConfig,
    scfg: SolverConfig,
    initial: DiscreteTrajectory,
    sink: Callable[[IterationRecord], None] | None = None,
) -> RunSummary:
    """Run the method from ``initial`` (projected onto the base set first)."""
    t_start = time.perf_counter()
    grid = grid_for(spec, initial)
    imposed = effective_base_set(base_set, pcfg)
    x = project_to_base_set(initial, spec, imposed)
    if not initial.allclose(x, atol=1e-12):
        logger.info("initial guess projected onto the base set")
    ls_allowed = line_search_admissible(imposed)
    c = pcfg.c0
    records: list[IterationRecord] = []
    steps: list[tuple[float, float]] = []
    total_solves = 0
    increases = 0
    termination = Termination.MAX_ITERS
    last_base = x

    def Phi(tr, cc):
        v = eval_Phi(tr, spec, base_set, pcfg, cc)
        if not np.isfinite(v):
            raise NonFinitePenalty(f"penalty function is not finite ({v}) at iteration {len(records)}")
        return v

    for k in range(scfg.max_outer_iters):
        last_base = x
        eps = scfg.eps_sub * scfg.eps_sub_factor**k
        bundle = collect_subgradients(x, spec)
        ms = MajorantSolver(x, bundle, spec, base_set, pcfg)
        G_base = ms.Gamma(x)
        statuses: list[str] = []
        gaps: list[float] = []
        n_q = n_g = 0
        flags = dict(step2=False, step3=False, ptc=False)

        def solve(cc):
            nonlocal n_q
            n_q += 1
            r = ms.solve_Q(cc, eps)
            statuses.append(r.status.value + ("*" if r.replaced_by_base else ""))
            gaps.append(r.certified_gap)
            return r

        def raise_c(cc):
            nxt = cc * pcfg.rho
            if nxt > pcfg.c_max * (1 + 1e-12):
                raise _CMaxHit
            return nxt

        c_plus = c
        try:
            cand = solve(c_plus)
            G_cand = ms.Gamma(cand.traj)
            if G_cand > scfg.eps_phi:
                # Step 2
                flags["step2"] = True
                hat = ms.solve_Gamma(eps)
                n_g += 1
                statuses.append("G:" + hat.status.value)
                if hat.objective < G_base - eps:
                    # Step 3
                    flags["step3"] = True
                    while G_cand - G_base > scfg.eta1 * (hat.objective - G_base):
                        c_plus = raise_c(c_plus)
                        cand = solve(c_plus)
                        G_cand = ms.Gamma(cand.traj)
                else:
                    flags["ptc"] = True
                    logger.info("iteration %d: base is critical for the infeasibility measure", k)
                    while G_cand > G_base + scfg.eps_feas:
                        c_plus = raise_c(c_plus)
                        cand = solve(c_plus)
                        G_cand = ms.Gamma(cand.traj)
            # Step 4
            c_next = c_plus
            while True:
                dQ = ms.Q(cand.traj, c_next) - ms.Q(x, c_next)
                ok = dQ <= c_next * scfg.eta2 * (G_cand - G_base)
                if ok and scfg.check_assumption5 and flags["step3"]:
                    ok = G_cand - G_base <= scfg.eta1 * (hat.objective - G_base)
                if ok:
                    break
                c_next = raise_c(c_next)
                cand = solve(c_next)
                G_cand = ms.Gamma(cand.traj)
        except _CMaxHit:
            logger.warning("iteration %d: penalty parameter would exceed c_max = %g", k, pcfg.c_max)
            termination = Termination.C_MAX_HIT
            total_solves += n_q
            break
        total_solves += n_q
        if c_next > c:
            increases += int(round(math.log(c_next / c, pcfg.rho)))

        # Step 5
        y = cand.traj
        d = y - x
        rho = math.sqrt(l2_norm_sq(d, grid))
        nu, nu_flag = choose_nu(scfg.nu_strategy, k, rho, records)
        alpha_bar = choose_trial_step(scfg.trial_step, steps) if ls_allowed else 0.0
        Phi_base = Phi(x, c_next)
        Phi_cand = Phi(y, c_next)
        alpha, j, capped = 0.0, 0, False
        nxt = y
        if alpha_bar > 0 and rho > 0:
            for j in range(scfg.line_search_max_j + 1):
                a = scfg.zeta**j * alpha_bar
                trial = y + a * d
                if Phi(trial, c_next) - Phi_cand <= -scfg.sigma * a**2 * rho**2 + nu:
                    alpha, nxt = a, trial
                    break
            else:
                capped = True
                logger.warning("iteration %d: line search cap reached; taking alpha = 0", k)
        steps.append((alpha_bar, alpha))
        Phi_next = Phi(nxt, c_next) if alpha > 0 else Phi_cand
        phi_next = eval_phi(nxt, spec, base_set, pcfg)
        Q_base = ms.Q(x, c_next)
        rec = IterationRecord(
            k=k,
            c_k=c,
            c_next=c_next,
            Phi=Phi_next,
            J=eval_J(nxt, spec),
            phi=phi_next,
            Gamma_base=G_base,
            Gamma_cand=G_cand,
            Q_base=Q_base,
            Q_cand=cand.objective,
            Phi_base=Phi_base,
            Phi_cand=Phi_cand,
            rho=rho,
            alpha_bar=alpha_bar,
            alpha=alpha,
            j=j,
            nu=nu,
            nu_flagged=nu_flag,
            inner_Q_solves=n_q,
            Gamma_solves=n_g,
            step2_executed=flags["step2"],
            step3_executed=flags["step3"],
            penalty_term_critical_event=flags["ptc"],
            assumption2_triggered=cand.replaced_by_base,
            line_search_capped=capped,
            max_certified_gap=max(gaps),
            statuses="|".join(statuses),
        )
        records.append(rec)
        if sink is not None:
            sink(rec)
        logger.info(
            "k=%d c=%g Phi=%.6f J=%.6f phi=%.3g rho=%.3g alpha=%.3g", k, c_next, Phi_next, rec.J, phi_next, rho, alpha
        )
        c = c_next
        x = nxt
        stop = check_stopping(
            scfg.stopping,
            Phi_next=Phi_next,
            Phi_base=Phi_base,
            phi_next=phi_next,
            Q_base=Q_base,
            Q_cand=cand.objective,
            Gamma_cand=G_cand,
            rho=rho,
            eps_f=scfg.eps_f,
            eps_phi=scfg.eps_phi,
            eps_x=scfg.eps_x,
        )
        if stop:
            termination = Termination.CONVERGED
            break
        if cand.replaced_by_base and alpha == 0:
            # the next iteration would repeat this one exactly
            termination = Termination.ASSUMPTION2_CRITICAL
            x = last_base
            break

    return RunSummary(
        termination=termination,
        traj=x,
        last_base=last_base,
        c=c,
        J=eval_J(x, spec),
        phi=eval_phi(x, spec, base_set, pcfg),
        iterations=len(records),
        penalty_increases=increases,
        total_inner_solves=total_solves,
        wall_time=time.perf_counter() - t_start,
        records=records,
    )


def record_dict(rec: IterationRecord) -> dict:
    return asdict(rec)
