"""Certify (generalized) epsilon-criticality of a transcribed trajectory.

A point is checked by linearizing at itself and solving both convex
subproblems to high accuracy: if the penalized majorant cannot be lowered
by more than ``eps`` the point is (generalized) ``eps``-critical, and if
the infeasibility majorant cannot be lowered by more than ``eps`` it is
critical for the penalty term.  Only the deterministic subgradient
selection is tried, so a failed check is evidence, not proof.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .penalty import PenaltyConfig, collect_subgradients, eval_phi
from .problem import ProblemSpec, X0Spec
from .subsolver import MajorantSolver
from .transcription import DiscreteTrajectory


class Verdict(str, Enum):
    EPS_CRITICAL = "eps_critical"
    GENERALIZED_EPS_CRITICAL = "generalized_eps_critical"
    PENALTY_TERM_CRITICAL = "penalty_term_critical"
    NOT_CRITICAL = "not_critical"


@dataclass
class CriticalityReport:
    candidate: DiscreteTrajectory
    c_used: float
    eps: float
    Q_gap: float
    Gamma_gap: float
    phi_value: float
    feasible: bool
    verdict: Verdict
    solver_tolerance: float

    @property
    def generalized_critical(self) -> bool:
        return self.Q_gap <= self.eps

    @property
    def penalty_term_critical(self) -> bool:
        return self.Gamma_gap <= self.eps

    def to_dict(self) -> dict:
        return {
            "c_used": self.c_used,
            "eps": self.eps,
            "Q_gap": self.Q_gap,
            "Gamma_gap": self.Gamma_gap,
            "phi_value": self.phi_value,
            "feasible": self.feasible,
            "generalized_critical": self.generalized_critical,
            "penalty_term_critical": self.penalty_term_critical,
            "verdict": self.verdict.value,
            "solver_tolerance": self.solver_tolerance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def classify(Q_gap: float, Gamma_gap: float, phi_value: float, eps: float, eps_phi: float) -> Verdict:
    feasible = phi_value <= eps_phi
    if Q_gap <= eps:
        return Verdict.EPS_CRITICAL if feasible else Verdict.GENERALIZED_EPS_CRITICAL
    if Gamma_gap <= eps:
        return Verdict.PENALTY_TERM_CRITICAL
    return Verdict.NOT_CRITICAL


def verify_criticality(
    candidate: DiscreteTrajectory,
    spec: ProblemSpec,
    base_set: X0Spec,
    pcfg: PenaltyConfig,
    c: float,
    eps: float,
    eps_phi: float = 0.1,
    solver_tolerance: float = 1e-9,
) -> CriticalityReport:
    """Gaps are ``value at candidate - certified lower bound of the minimum``."""
    bundle = collect_subgradients(candidate, spec)
    ms = MajorantSolver(candidate, bundle, spec, base_set, pcfg)
    q = ms.solve_Q(c, solver_tolerance)
    g = ms.solve_Gamma(solver_tolerance)
    Q_gap = ms.Q(candidate, c) - q.lower_bound
    Gamma_gap = ms.Gamma(candidate) - g.lower_bound
    phi = eval_phi(candidate, spec, base_set, pcfg)
    return CriticalityReport(
        candidate=candidate,
        c_used=c,
        eps=eps,
        Q_gap=Q_gap,
        Gamma_gap=Gamma_gap,
        phi_value=phi,
        feasible=phi <= eps_phi,
        verdict=classify(Q_gap, Gamma_gap, phi, eps, eps_phi),
        solver_tolerance=solver_tolerance,
    )
