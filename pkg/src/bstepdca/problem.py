"""Continuous-time DC optimal control problems and their convex base sets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dc_expr import Affine, DCPair, ExprError, zero


class ProblemLoadError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemSpec:
    """Problem data.

    Running terms (cost, dynamics, mixed constraints) act on ``(x, u)`` in
    ``R^(n+m)``; endpoint terms act on ``(x(0), x(T))`` in ``R^(2n)``.
    ``dynamics[i]`` is ``None`` for rows enforced exactly through the base set.
    """

    n: int
    m: int
    T: float
    running_cost: DCPair
    dynamics: tuple
    terminal_cost: DCPair | None = None
    endpoint_ineq: tuple = ()
    endpoint_eq: tuple = ()
    mixed: tuple = ()
    name: str = ""

    @property
    def penalized_rows(self) -> list[int]:
        return [i for i, f in enumerate(self.dynamics) if f is not None]

    def running_pairs(self):
        yield "cost", self.running_cost
        for i, f in enumerate(self.dynamics):
            if f is not None:
                yield f"dynamics[{i}]", f
        for s, f in enumerate(self.mixed):
            yield f"mixed[{s}]", f

    def endpoint_pairs(self):
        if self.terminal_cost is not None:
            yield "terminal", self.terminal_cost
        for i, f in enumerate(self.endpoint_ineq):
            yield f"endpoint_ineq[{i}]", f
        for j, f in enumerate(self.endpoint_eq):
            yield f"endpoint_eq[{j}]", f

    @property
    def table_rows(self) -> int | None:
        counts = set()
        for _, f in self.running_pairs():
            counts.add(f.table_rows)
        counts.discard(None)
        if len(counts) > 1:
            raise ProblemLoadError(f"coefficient tables of different lengths: {sorted(counts)}")
        return counts.pop() if counts else None


@dataclass(frozen=True)
class X0Spec:
    """Convex constraints handled exactly inside every subproblem.

    Fixed endpoint vectors may contain NaN entries for free components.
    ``linear_dynamics`` maps a state row to an affine right-hand side over
    ``(x, u)``; ``control_box`` is a pair of bound vectors (entries may be
    infinite).
    """

    fixed_initial: np.ndarray | None = None
    fixed_terminal: np.ndarray | None = None
    linear_dynamics: dict = field(default_factory=dict)
    control_box: tuple | None = None

    def without_box(self) -> X0Spec:
        return replace(self, control_box=None)


def validate(spec: ProblemSpec, base: X0Spec) -> list[str]:
    """Return human-readable invariant violations (empty when all hold)."""
    out = []
    if spec.n < 1:
        out.append("state dimension n must be >= 1")
    if spec.m < 1:
        out.append("control dimension m must be >= 1")
    if not (np.isfinite(spec.T) and spec.T > 0):
        out.append("horizon must be positive")
    d_run, d_end = spec.n + spec.m, 2 * spec.n
    if len(spec.dynamics) != spec.n:
        out.append(f"expected {spec.n} dynamics entries, got {len(spec.dynamics)}")
    for name, f in spec.running_pairs():
        if f.arity != d_run:
            out.append(f"{name} has arity {f.arity}, expected n+m = {d_run}")
    for name, f in spec.endpoint_pairs():
        if f.arity != d_end:
            out.append(f"{name} has arity {f.arity}, expected 2n = {d_end}")
    try:
        spec.table_rows
    except ProblemLoadError as exc:
        out.append(str(exc))
    for i, rhs in base.linear_dynamics.items():
        if not 0 <= i < spec.n:
            out.append(f"linear dynamics row {i} out of range")
            continue
        if i < len(spec.dynamics) and spec.dynamics[i] is not None:
            out.append(f"dynamics row {i} is both penalized and in the base set")
        if not rhs.is_affine:
            out.append(f"base-set dynamics row {i} is not affine")
        elif rhs.arity != d_run:
            out.append(f"base-set dynamics row {i} has arity {rhs.arity}, expected {d_run}")
    for i, f in enumerate(spec.dynamics):
        if f is None and i not in base.linear_dynamics:
            out.append(f"dynamics row {i} is neither penalized nor in the base set")
    for label, vec in (("fixed_initial", base.fixed_initial), ("fixed_terminal", base.fixed_terminal)):
        if vec is not None and np.asarray(vec).shape != (spec.n,):
            out.append(f"{label} must have length n = {spec.n}")
    if base.control_box is not None:
        lo, hi = (np.asarray(b, dtype=float) for b in base.control_box)
        if lo.shape != (spec.m,) or hi.shape != (spec.m,):
            out.append(f"control bounds must have length m = {spec.m}")
        elif np.any(lo > hi):
            out.append("control lower bound exceeds upper bound")
    return out


def line_search_admissible(base: X0Spec) -> bool:
    """Whether every trial step along a subproblem direction stays in the base set.

    True exactly when the set is affine, i.e. carries no control box.
    """
    return base.control_box is None


# ---------------------------------------------------------------------------
# JSON


def _pair_or_none(doc):
    return None if doc is None else DCPair.from_dict(doc)


def _vec_or_none(v):
    if v is None:
        return None
    return np.array([np.nan if e is None else float(e) for e in v])


def _vec_to_json(v):
    if v is None:
        return None
    return [None if np.isnan(e) else float(e) for e in np.asarray(v, dtype=float)]


def problem_from_dict(doc: dict) -> tuple[ProblemSpec, X0Spec]:
    try:
        n, m = int(doc["n"]), int(doc["m"])
        x0 = doc.get("x0_set") or {}
        box = x0.get("control_box")
        base = X0Spec(
            fixed_initial=_vec_or_none(x0.get("fixed_initial")),
            fixed_terminal=_vec_or_none(x0.get("fixed_terminal")),
            linear_dynamics={int(k): Affine(v["coeff"], v.get("offset", 0.0)) for k, v in (x0.get("linear_dynamics") or {}).items()},
            control_box=None
            if box is None
            else (
                np.array([-np.inf if e is None else float(e) for e in box["lower"]]),
                np.array([np.inf if e is None else float(e) for e in box["upper"]]),
            ),
        )
        cost = doc.get("cost")
        spec = ProblemSpec(
            n=n,
            m=m,
            T=float(doc["T"]),
            running_cost=DCPair.from_dict(cost) if cost is not None else DCPair(zero(n + m), zero(n + m)),
            dynamics=tuple(_pair_or_none(f) for f in doc.get("dynamics", [None] * n)),
            terminal_cost=_pair_or_none(doc.get("terminal")),
            endpoint_ineq=tuple(DCPair.from_dict(f) for f in doc.get("endpoint_ineq", [])),
            endpoint_eq=tuple(DCPair.from_dict(f) for f in doc.get("endpoint_eq", [])),
            mixed=tuple(DCPair.from_dict(f) for f in doc.get("mixed", [])),
            name=doc.get("name", ""),
        )
    except (KeyError, TypeError, ExprError) as exc:
        raise ProblemLoadError(f"malformed problem document: {exc}") from exc
    grid = doc.get("N")
    rows = spec.table_rows
    if rows is not None and grid is not None and int(grid) != rows:
        raise ProblemLoadError(f"coefficient tables have {rows} rows but the document declares N={grid}")
    return spec, base


def problem_to_dict(spec: ProblemSpec, base: X0Spec) -> dict:
    box = base.control_box
    doc = {
        "name": spec.name,
        "n": spec.n,
        "m": spec.m,
        "T": spec.T,
        "cost": spec.running_cost.to_dict(),
        "terminal": None if spec.terminal_cost is None else spec.terminal_cost.to_dict(),
        "dynamics": [None if f is None else f.to_dict() for f in spec.dynamics],
        "endpoint_ineq": [f.to_dict() for f in spec.endpoint_ineq],
        "endpoint_eq": [f.to_dict() for f in spec.endpoint_eq],
        "mixed": [f.to_dict() for f in spec.mixed],
        "x0_set": {
            "fixed_initial": _vec_to_json(base.fixed_initial),
            "fixed_terminal": _vec_to_json(base.fixed_terminal),
            "linear_dynamics": {str(k): v.to_dict() for k, v in base.linear_dynamics.items()},
            "control_box": None
            if box is None
            else {
                "lower": [None if np.isinf(e) else float(e) for e in box[0]],
                "upper": [None if np.isinf(e) else float(e) for e in box[1]],
            },
        },
    }
    if spec.table_rows is not None:
        doc["N"] = spec.table_rows
    return doc


def load_problem(path) -> tuple[ProblemSpec, X0Spec]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ProblemLoadError(f"cannot read problem file {path}: {exc}") from exc
    return problem_from_dict(doc)


def save_problem(spec: ProblemSpec, base: X0Spec, path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(spec, base), indent=1))
