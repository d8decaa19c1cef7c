"""Train-control benchmark: minimum-energy run over 200 m with a speed limit.

States are position ``x1`` and speed ``x2``; the (rescaled) control is the
traction/braking force ``u``.  Drag is ``P x2|x2| + Q x2`` and the energy
cost integrand is ``x2 [u]_+``.  The speed limit is 7 except for a dip to 4
between positions 100 and 120 with linear ramps of slope 0.3.
"""

from __future__ import annotations

import numpy as np

from .dc_expr import DCPair, affine, maximum, pos, scale, sqnorm, square, total, zero
from .driver import AdaptiveStep, ConstantStep, NuStepScaled, SolverConfig, Stopping
from .penalty import BoxMode, PenaltyConfig
from .problem import ProblemSpec, X0Spec
from .transcription import DiscreteTrajectory, Grid

P_DRAG = 0.78e-4
Q_DRAG = 0.28e-3
HORIZON = 48.0
DISTANCE = 200.0
U_MAX = 2.0 / 3.0

VARIANTS = ("step0", "step_l1", "bstep_l1", "step_linf", "bstep_linf")

# decision-variable order inside running terms: (x1, x2, u)
_X1, _X2, _U = np.eye(3)


def _speed_limit_parts():
    ramp_down = affine(-0.3 * _X1, 7.0 + 27.0)  # 7 - 0.3 (x1 - 90)
    ramp_up = affine(0.3 * _X1, 4.0 - 36.0)  # 4 + 0.3 (x1 - 120)
    upper = maximum(ramp_down, affine(np.zeros(3), 4.0), ramp_up)
    excess = maximum(affine(np.zeros(3), 0.0), affine(-0.3 * _X1, 27.0), affine(0.3 * _X1, -39.0))
    return upper, excess


def cost_pair() -> DCPair:
    px, nx, pu = pos(affine(_X2)), pos(affine(-_X2)), pos(affine(_U))
    g = scale(0.5, sqnorm(total(px, pu), nx))
    h = scale(0.5, sqnorm(total(nx, pu), px))
    return DCPair(g, h)


def speed_dynamics_pair() -> DCPair:
    """``u - P x2|x2| - Q x2`` with ``x2|x2| = [x2]_+^2 - [-x2]_+^2``."""
    g = total(affine(_U - Q_DRAG * _X2), scale(P_DRAG, square(pos(affine(-_X2)))))
    h = scale(P_DRAG, square(pos(affine(_X2))))
    return DCPair(g, h)


def speed_limit_pair() -> DCPair:
    """``x2 - min{7, M(x1)} <= 0`` written as ``(x2 + K(x1)) - M(x1)``."""
    upper, excess = _speed_limit_parts()
    return DCPair(total(affine(_X2), excess), upper)


# direct evaluations, used to cross-check the decompositions


def cost_direct(x2, u):
    return np.asarray(x2) * np.maximum(np.asarray(u), 0.0)


def drag_direct(x2):
    x2 = np.asarray(x2)
    return x2 * np.abs(x2)


def speed_limit_direct(x1, x2):
    x1 = np.asarray(x1)
    m = np.maximum(np.maximum(7 - 0.3 * (x1 - 90), 4.0), 4 + 0.3 * (x1 - 120))
    return np.asarray(x2) - np.minimum(7.0, m)


def _base_problem(name: str) -> ProblemSpec:
    return ProblemSpec(
        n=2,
        m=1,
        T=HORIZON,
        running_cost=cost_pair(),
        dynamics=(None, speed_dynamics_pair()),
        mixed=(speed_limit_pair(),),
        name=name,
    )


def _base_set() -> X0Spec:
    return X0Spec(
        fixed_initial=np.array([0.0, 0.0]),
        fixed_terminal=np.array([DISTANCE, 0.0]),
        linear_dynamics={0: affine(_X2)},
        control_box=(np.array([-U_MAX]), np.array([U_MAX])),
    )


def build_train(variant: str, N: int = 480):
    """Return ``(spec, base_set, penalty_cfg, solver_cfg, initial)`` for a variant.

    ``step0`` keeps the control box in the base set (so no line search);
    ``*_l1`` / ``*_linf`` penalize the box in the integral / sup sense, and
    the ``bstep_`` variants enable the boosting line search.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown train variant {variant!r}; expected one of {', '.join(VARIANTS)}")
    Grid(HORIZON, N)
    mode = {
        "step0": BoxMode.IN_X0,
        "step_l1": BoxMode.PENALIZE_L1,
        "bstep_l1": BoxMode.PENALIZE_L1,
        "step_linf": BoxMode.PENALIZE_LINF,
        "bstep_linf": BoxMode.PENALIZE_LINF,
    }[variant]
    trial = AdaptiveStep(gamma=0.5, alpha0=1.0) if variant.startswith("bstep") else ConstantStep(0.0)
    pcfg = PenaltyConfig(control_box_mode=mode, c0=10.0, rho=10.0)
    scfg = SolverConfig(
        eta1=0.1,
        eta2=0.1,
        sigma=0.1,
        zeta=0.5,
        eps_phi=0.1,
        eps_feas=0.01,
        eps_f=1e-3,
        nu_strategy=NuStepScaled(0.1),
        trial_step=trial,
        stopping=Stopping.CRITERION1,
    )
    initial = DiscreteTrajectory.zeros(N, 2, 1)
    return _base_problem(f"train_{variant}"), _base_set(), pcfg, scfg, initial


def build_train_fully_penalized():
    """Every constraint penalized: endpoints, both dynamics rows and the control box.

    The base set keeps only the (penalized) control box bounds.
    """
    d_end = 4
    e = np.eye(d_end)
    spec = ProblemSpec(
        n=2,
        m=1,
        T=HORIZON,
        running_cost=cost_pair(),
        dynamics=(DCPair(affine(_X2), zero(3)), speed_dynamics_pair()),
        endpoint_eq=(
            DCPair(affine(e[0]), zero(d_end)),
            DCPair(affine(e[1]), zero(d_end)),
            DCPair(affine(e[2], -DISTANCE), zero(d_end)),
            DCPair(affine(e[3]), zero(d_end)),
        ),
        mixed=(speed_limit_pair(),),
        name="train_fully_penalized",
    )
    base = X0Spec(control_box=(np.array([-U_MAX]), np.array([U_MAX])))
    return spec, base, PenaltyConfig(control_box_mode=BoxMode.PENALIZE_L1)


def warm_start(N: int = 480, cruise_speed: float = 6.5, slow_speed: float = 3.9) -> DiscreteTrajectory:
    """Hand-shaped start: accelerate hard, cruise, slow down for the restricted
    zone, accelerate again and brake to a stop at the target.

    Positions are integrated from the speed profile and rescaled so the run
    ends exactly at the target; the result is a reasonable but not
    necessarily feasible guess.
    """
    grid = Grid(HORIZON, N)
    t = grid.nodes
    v = np.minimum(U_MAX * t, cruise_speed)
    v = np.minimum(v, U_MAX * (HORIZON - t))
    v = np.maximum(v, 0.0)
    x1 = np.concatenate([[0.0], np.cumsum(v[:-1]) * grid.h])
    # crude slow zone, applied by position
    zone = (x1 > 95) & (x1 < 122)
    v = np.where(zone, np.minimum(v, slow_speed), v)
    x1 = np.concatenate([[0.0], np.cumsum(v[:-1]) * grid.h])
    if x1[-1] > 0:
        x1 *= DISTANCE / x1[-1]
        v[:-1] = np.diff(x1) / grid.h
    v[-1] = 0.0
    u = np.clip(np.diff(v) / grid.h + P_DRAG * v[:-1] * np.abs(v[:-1]) + Q_DRAG * v[:-1], -U_MAX, U_MAX)
    return DiscreteTrajectory(np.column_stack([x1, v]), u[:, None])
