"""Convex piecewise linear-quadratic (PLQ) expressions.

Expressions are small immutable trees built from affine maps with a
handful of convexity-preserving combinators.  Every node can

* evaluate itself on a batch of points,
* return one subgradient per point (ties at kinks go to the lowest
  child index, so results are reproducible), and
* reduce itself exactly to linear and convex-quadratic constraints on
  auxiliary epigraph variables, which is how the subproblem solver sees it.

Affine nodes may carry per-sample coefficient tables (one row per grid
sample) to express explicit time dependence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ExprError(ValueError):
    """Invalid expression construction or evaluation request."""


# ---------------------------------------------------------------------------
# affine forms over a growing decision vector


class LinearForm:
    """``K`` scalar affine functions of a decision vector, stored as triplets.

    Row ``k`` equals ``sum(vals[rows == k] * y[cols[rows == k]]) + const[k]``.
    Duplicated (row, col) pairs are summed when the form is assembled.
    """

    __slots__ = ("rows", "cols", "vals", "const")

    def __init__(self, rows, cols, vals, const):
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.vals = np.asarray(vals, dtype=float)
        self.const = np.asarray(const, dtype=float)

    @property
    def size(self) -> int:
        return self.const.shape[0]

    @classmethod
    def constant(cls, const) -> LinearForm:
        const = np.atleast_1d(np.asarray(const, dtype=float))
        empty = np.zeros(0, dtype=np.int64)
        return cls(empty, empty, np.zeros(0), const)

    @classmethod
    def variables(cls, cols) -> LinearForm:
        cols = np.asarray(cols, dtype=np.int64)
        k = cols.shape[0]
        return cls(np.arange(k), cols, np.ones(k), np.zeros(k))

    def scaled(self, weights) -> LinearForm:
        """Multiply row ``k`` by ``weights[k]`` (or all rows by a scalar)."""
        w = np.asarray(weights, dtype=float)
        if w.ndim == 0:
            return LinearForm(self.rows, self.cols, self.vals * w, self.const * w)
        return LinearForm(self.rows, self.cols, self.vals * w[self.rows], self.const * w)

    def __add__(self, other) -> LinearForm:
        if isinstance(other, LinearForm):
            if other.size != self.size:
                raise ExprError("cannot add forms with different row counts")
            return LinearForm(
                np.concatenate([self.rows, other.rows]),
                np.concatenate([self.cols, other.cols]),
                np.concatenate([self.vals, other.vals]),
                self.const + other.const,
            )
        return LinearForm(self.rows, self.cols, self.vals, self.const + np.asarray(other, dtype=float))

    __radd__ = __add__

    def __neg__(self) -> LinearForm:
        return self.scaled(-1.0)

    def __sub__(self, other) -> LinearForm:
        return self + (-other)

    def summed(self, weights=None) -> LinearForm:
        """Collapse all rows into a single row, optionally weighted."""
        w = np.ones(self.size) if weights is None else np.broadcast_to(np.asarray(weights, dtype=float), (self.size,))
        return LinearForm(
            np.zeros(self.vals.shape[0], dtype=np.int64), self.cols, self.vals * w[self.rows], [float(w @ self.const)]
        )

    def take(self, index) -> LinearForm:
        """Rows ``index`` (an integer array) of this form, renumbered 0..len-1."""
        index = np.asarray(index, dtype=np.int64)
        pos = np.full(self.size, -1, dtype=np.int64)
        pos[index] = np.arange(index.shape[0])
        # each source row may be picked at most once
        if np.unique(index).shape[0] != index.shape[0]:
            raise ExprError("take() requires distinct rows")
        keep = pos[self.rows] >= 0
        return LinearForm(pos[self.rows[keep]], self.cols[keep], self.vals[keep], self.const[index])

    def evaluate(self, y) -> np.ndarray:
        out = self.const.copy()
        np.add.at(out, self.rows, self.vals * np.asarray(y)[self.cols])
        return out


@dataclass
class ConstraintSystem:
    """Epigraph reduction output.

    Decision vector ``y`` of length ``n_vars``.  Constraints are
    ``form <= 0`` for each form in ``inequalities``, ``form == 0`` for each
    form in ``equalities`` and ``t >= sum_i a_i**2`` row-wise for each
    ``(t, [a_1, ..., a_r])`` in ``quadratic``.
    """

    n_vars: int = 0
    inequalities: list = field(default_factory=list)
    equalities: list = field(default_factory=list)
    quadratic: list = field(default_factory=list)

    def new_vars(self, k: int) -> LinearForm:
        start = self.n_vars
        self.n_vars += k
        return LinearForm.variables(np.arange(start, start + k))

    def add_le(self, form: LinearForm) -> None:
        self.inequalities.append(form)

    def add_eq(self, form: LinearForm) -> None:
        self.equalities.append(form)

    def add_quadratic(self, t: LinearForm, parts: Sequence[LinearForm]) -> None:
        self.quadratic.append((t, list(parts)))

    def is_satisfied(self, y, tol: float = 1e-9) -> bool:
        y = np.asarray(y, dtype=float)
        for f in self.inequalities:
            if np.any(f.evaluate(y) > tol):
                return False
        for f in self.equalities:
            if np.any(np.abs(f.evaluate(y)) > tol):
                return False
        for t, parts in self.quadratic:
            sq = sum(p.evaluate(y) ** 2 for p in parts)
            if np.any(sq - t.evaluate(y) > tol):
                return False
        return True


# ---------------------------------------------------------------------------
# expression nodes


def _rows_of(table: np.ndarray, rows, k: int, const_ndim: int) -> np.ndarray:
    """Select per-sample rows of a table; arrays of rank ``const_ndim`` are constants."""
    if table.ndim <= const_ndim:
        return table
    if rows is None:
        raise ExprError("time-varying expression evaluated without sample indices")
    rows = np.asarray(rows)
    if rows.shape[0] != k:
        raise ExprError("sample index count does not match point count")
    if rows.size and rows.max() >= table.shape[0]:
        raise ExprError(f"sample index {rows.max()} outside coefficient table of {table.shape[0]} rows")
    return table[rows]


class ConvexExpr:
    """Base class of all expression nodes.  Instances are immutable."""

    kind: str = ""
    arity: int
    nonneg: bool = False

    # batch primitives -- subclasses implement these
    def _value_grad(self, X: np.ndarray, rows) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _reduce(self, args: list[LinearForm], system: ConstraintSystem, rows) -> LinearForm:
        raise NotImplementedError

    def children(self) -> tuple[ConvexExpr, ...]:
        return ()

    @property
    def table_rows(self) -> int | None:
        """Row count of per-sample coefficient tables below this node, if any."""
        counts = {c.table_rows for c in self.children()} - {None}
        if len(counts) > 1:
            raise ExprError(f"inconsistent coefficient tables: {sorted(counts)}")
        return counts.pop() if counts else None

    @property
    def is_affine(self) -> bool:
        return False

    def to_dict(self) -> dict:
        raise NotImplementedError

    # sugar
    def __add__(self, other: ConvexExpr) -> ConvexExpr:
        if not isinstance(other, ConvexExpr):
            return NotImplemented
        return Sum([self, other])

    def __rmul__(self, s: float) -> ConvexExpr:
        return Scale(float(s), self)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({json.dumps(self.to_dict())[:80]})"


class Affine(ConvexExpr):
    """``<coeff, p> + offset``.

    ``coeff`` has shape ``(d,)`` or ``(R, d)``; ``offset`` is a scalar or has
    shape ``(R,)``.  Two-dimensional tables hold one row per grid sample.
    """

    kind = "affine"

    def __init__(self, coeff, offset=0.0):
        coeff = np.array(coeff, dtype=float)
        offset = np.array(offset, dtype=float)
        if coeff.ndim not in (1, 2):
            raise ExprError("affine coefficients must be a vector or a per-sample table")
        if offset.ndim > 1:
            raise ExprError("affine offset must be a scalar or a per-sample vector")
        if coeff.ndim == 2 and offset.ndim == 1 and offset.shape[0] != coeff.shape[0]:
            raise ExprError("coefficient and offset tables have different lengths")
        if not (np.all(np.isfinite(coeff)) and np.all(np.isfinite(offset))):
            raise ExprError("affine data must be finite")
        coeff.setflags(write=False)
        offset.setflags(write=False)
        self.coeff = coeff
        self.offset = offset
        self.arity = coeff.shape[-1]
        self.nonneg = bool(not np.any(coeff) and np.all(offset >= 0))

    @property
    def table_rows(self) -> int | None:
        if self.coeff.ndim == 2:
            return self.coeff.shape[0]
        if self.offset.ndim == 1:
            return self.offset.shape[0]
        return None

    @property
    def is_affine(self) -> bool:
        return True

    def _value_grad(self, X, rows):
        k = X.shape[0]
        c = _rows_of(self.coeff, rows, k, 1)
        b = _rows_of(self.offset, rows, k, 0)
        vals = np.einsum("kd,kd->k", X, np.broadcast_to(c, X.shape)) + b
        return np.broadcast_to(vals, (k,)).astype(float), np.array(np.broadcast_to(c, X.shape), dtype=float)

    def _reduce(self, args, system, rows):
        k = args[0].size
        c = np.broadcast_to(_rows_of(self.coeff, rows, k, 1), (k, self.arity))
        b = np.broadcast_to(_rows_of(self.offset, rows, k, 0), (k,))
        out = LinearForm.constant(np.array(b, dtype=float))
        for i, a in enumerate(args):
            if np.any(c[:, i]):
                out = out + a.scaled(c[:, i])
        return out

    def to_dict(self):
        return {"kind": self.kind, "coeff": self.coeff.tolist(), "offset": self.offset.tolist()}


def _check_arity(children: Sequence[ConvexExpr]) -> int:
    if not children:
        raise ExprError("node needs at least one child")
    arities = {c.arity for c in children}
    if len(arities) != 1:
        raise ExprError(f"children have different arities: {sorted(arities)}")
    for c in children:
        if not isinstance(c, ConvexExpr):
            raise ExprError(f"not an expression: {c!r}")
    return arities.pop()


class Max(ConvexExpr):
    """Pointwise maximum of its children."""

    kind = "max"

    def __init__(self, children: Sequence[ConvexExpr]):
        self._children = tuple(children)
        self.arity = _check_arity(self._children)
        self.nonneg = any(c.nonneg for c in self._children)

    def children(self):
        return self._children

    def _value_grad(self, X, rows):
        vg = [c._value_grad(X, rows) for c in self._children]
        vals = np.stack([v for v, _ in vg])
        # argmax picks the first maximal entry: lowest-index tie-break
        active = np.argmax(vals, axis=0)
        grads = np.stack([g for _, g in vg])
        k = np.arange(X.shape[0])
        return vals[active, k], grads[active, k]

    def _reduce(self, args, system, rows):
        parts = [c._reduce(args, system, rows) for c in self._children]
        t = system.new_vars(args[0].size)
        for p in parts:
            system.add_le(p - t)
        return t

    def to_dict(self):
        return {"kind": self.kind, "children": [c.to_dict() for c in self._children]}


class PosPart(ConvexExpr):
    """``max{0, child}``; at a tie the zero branch is the active one."""

    kind = "pos"
    nonneg = True

    def __init__(self, child: ConvexExpr):
        self.child = child
        self.arity = _check_arity([child])

    def children(self):
        return (self.child,)

    def _value_grad(self, X, rows):
        v, g = self.child._value_grad(X, rows)
        active = v > 0.0
        return np.where(active, v, 0.0), np.where(active[:, None], g, 0.0)

    def _reduce(self, args, system, rows):
        a = self.child._reduce(args, system, rows)
        t = system.new_vars(args[0].size)
        system.add_le(a - t)
        system.add_le(-t)
        return t

    def to_dict(self):
        return {"kind": self.kind, "children": [self.child.to_dict()]}


class Square(ConvexExpr):
    """Square of a nonnegative convex child, e.g. ``[x]_+^2``."""

    kind = "square"
    nonneg = True

    def __init__(self, child: ConvexExpr):
        self.arity = _check_arity([child])
        if not child.nonneg:
            raise ExprError("square() requires a provably nonnegative child (positive part, max with zero, ...)")
        self.child = child

    def children(self):
        return (self.child,)

    def _value_grad(self, X, rows):
        v, g = self.child._value_grad(X, rows)
        return v * v, 2.0 * v[:, None] * g

    def _reduce(self, args, system, rows):
        a = self.child._reduce(args, system, rows)
        t = system.new_vars(args[0].size)
        system.add_quadratic(t, [a])
        return t

    def to_dict(self):
        return {"kind": self.kind, "children": [self.child.to_dict()]}


class Scale(ConvexExpr):
    """Nonnegative multiple of a child."""

    kind = "scale"

    def __init__(self, scale: float, child: ConvexExpr):
        scale = float(scale)
        if not np.isfinite(scale) or scale < 0.0:
            raise ExprError(f"scale factor must be finite and >= 0, got {scale}")
        self.scale = scale
        self.child = child
        self.arity = _check_arity([child])
        self.nonneg = child.nonneg

    def children(self):
        return (self.child,)

    @property
    def is_affine(self):
        return self.child.is_affine

    def _value_grad(self, X, rows):
        v, g = self.child._value_grad(X, rows)
        return self.scale * v, self.scale * g

    def _reduce(self, args, system, rows):
        return self.child._reduce(args, system, rows).scaled(self.scale)

    def to_dict(self):
        return {"kind": self.kind, "scale": self.scale, "children": [self.child.to_dict()]}


class Sum(ConvexExpr):
    kind = "sum"

    def __init__(self, children: Sequence[ConvexExpr]):
        self._children = tuple(children)
        self.arity = _check_arity(self._children)
        self.nonneg = all(c.nonneg for c in self._children)

    def children(self):
        return self._children

    @property
    def is_affine(self):
        return all(c.is_affine for c in self._children)

    def _value_grad(self, X, rows):
        vals = np.zeros(X.shape[0])
        grads = np.zeros(X.shape)
        for c in self._children:
            v, g = c._value_grad(X, rows)
            vals = vals + v
            grads = grads + g
        return vals, grads

    def _reduce(self, args, system, rows):
        out = self._children[0]._reduce(args, system, rows)
        for c in self._children[1:]:
            out = out + c._reduce(args, system, rows)
        return out

    def to_dict(self):
        return {"kind": self.kind, "children": [c.to_dict() for c in self._children]}


class SquaredNorm(ConvexExpr):
    """``sum_i child_i**2`` over affine or nonnegative convex children."""

    kind = "sqnorm"
    nonneg = True

    def __init__(self, children: Sequence[ConvexExpr]):
        self._children = tuple(children)
        self.arity = _check_arity(self._children)
        for c in self._children:
            if not (c.is_affine or c.nonneg):
                raise ExprError("squared norm entries must be affine or nonnegative")

    def children(self):
        return self._children

    def _value_grad(self, X, rows):
        vals = np.zeros(X.shape[0])
        grads = np.zeros(X.shape)
        for c in self._children:
            v, g = c._value_grad(X, rows)
            vals = vals + v * v
            grads = grads + 2.0 * v[:, None] * g
        return vals, grads

    def _reduce(self, args, system, rows):
        parts = [c._reduce(args, system, rows) for c in self._children]
        t = system.new_vars(args[0].size)
        system.add_quadratic(t, parts)
        return t

    def to_dict(self):
        return {"kind": self.kind, "children": [c.to_dict() for c in self._children]}


@dataclass(frozen=True)
class DCPair:
    """A DC function ``convex - concave`` given by its two convex parts."""

    convex: ConvexExpr
    concave: ConvexExpr

    def __post_init__(self):
        if self.convex.arity != self.concave.arity:
            raise ExprError("DC parts have different arities")

    @property
    def arity(self) -> int:
        return self.convex.arity

    @property
    def table_rows(self) -> int | None:
        counts = {self.convex.table_rows, self.concave.table_rows} - {None}
        if len(counts) > 1:
            raise ExprError("DC parts use coefficient tables of different lengths")
        return counts.pop() if counts else None

    def value(self, point, sample=None) -> float:
        return evaluate(self.convex, point, sample) - evaluate(self.concave, point, sample)

    def values(self, X) -> np.ndarray:
        return eval_batch(self.convex, X) - eval_batch(self.concave, X)

    def to_dict(self) -> dict:
        return {"convex": self.convex.to_dict(), "concave": self.concave.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> DCPair:
        return cls(expr_from_dict(doc["convex"]), expr_from_dict(doc["concave"]))


# ---------------------------------------------------------------------------
# constructors


def var(i: int, d: int) -> Affine:
    """The coordinate function ``p -> p[i]`` on ``R^d``."""
    c = np.zeros(d)
    c[i] = 1.0
    return Affine(c, 0.0)


def const(value: float, d: int) -> Affine:
    return Affine(np.zeros(d), value)


def affine(coeff, offset=0.0) -> Affine:
    return Affine(coeff, offset)


def maximum(*children: ConvexExpr) -> ConvexExpr:
    return Max(children)


def pos(child: ConvexExpr) -> PosPart:
    return PosPart(child)


def square(child: ConvexExpr) -> Square:
    return Square(child)


def scale(s: float, child: ConvexExpr) -> Scale:
    return Scale(s, child)


def total(*children: ConvexExpr) -> Sum:
    return Sum(children)


def sqnorm(*children: ConvexExpr) -> SquaredNorm:
    return SquaredNorm(children)


def zero(d: int) -> Affine:
    return Affine(np.zeros(d), 0.0)


# ---------------------------------------------------------------------------
# public evaluation API


def _as_points(expr: ConvexExpr, point) -> np.ndarray:
    X = np.asarray(point, dtype=float)
    if X.shape[-1] != expr.arity or X.ndim not in (1, 2):
        raise ExprError(f"point of shape {X.shape} does not match expression arity {expr.arity}")
    return X


def evaluate(expr: ConvexExpr, point, sample: int | None = None) -> float:
    """Value of ``expr`` at one point; ``sample`` selects a coefficient-table row."""
    X = _as_points(expr, point)
    if X.ndim != 1:
        raise ExprError("evaluate() takes a single point; use eval_batch for arrays")
    if sample is None and expr.table_rows is not None:
        raise ExprError("time-varying expression needs a sample index")
    rows = None if sample is None else np.array([sample])
    v, _ = expr._value_grad(X[None, :], rows)
    return float(v[0])


def subgradient(expr: ConvexExpr, point, sample: int | None = None) -> np.ndarray:
    X = _as_points(expr, point)
    if X.ndim != 1:
        raise ExprError("subgradient() takes a single point; use subgradient_batch for arrays")
    if sample is None and expr.table_rows is not None:
        raise ExprError("time-varying expression needs a sample index")
    rows = None if sample is None else np.array([sample])
    _, g = expr._value_grad(X[None, :], rows)
    return g[0].copy()


def eval_batch(expr: ConvexExpr, X, rows=None) -> np.ndarray:
    """Row-wise values.  With coefficient tables, row ``j`` uses sample ``j``
    unless explicit ``rows`` are given."""
    X = _as_points(expr, X)
    if X.ndim != 2:
        raise ExprError("eval_batch() takes a 2-D array of points")
    if rows is None and expr.table_rows is not None:
        rows = np.arange(X.shape[0])
    v, _ = expr._value_grad(X, rows)
    return np.array(v, dtype=float)


def value_and_subgradient_batch(expr: ConvexExpr, X, rows=None) -> tuple[np.ndarray, np.ndarray]:
    X = _as_points(expr, X)
    if X.ndim != 2:
        raise ExprError("expected a 2-D array of points")
    if rows is None and expr.table_rows is not None:
        rows = np.arange(X.shape[0])
    v, g = expr._value_grad(X, rows)
    return np.array(v, dtype=float), np.array(g, dtype=float)


def subgradient_batch(expr: ConvexExpr, X, rows=None) -> np.ndarray:
    return value_and_subgradient_batch(expr, X, rows)[1]


def reduce_batch(expr: ConvexExpr, args: Sequence[LinearForm], system: ConstraintSystem, rows=None) -> LinearForm:
    """Epigraph-reduce ``expr`` applied row-wise to affine arguments.

    ``args[i]`` holds the ``i``-th argument for each of ``K`` rows.  Returns
    a form ``U`` with ``U >= expr(args)`` on the feasible set of ``system``;
    minimizing any nonnegative combination of ``U`` drives it to equality.
    """
    if len(args) != expr.arity:
        raise ExprError(f"expression takes {expr.arity} arguments, got {len(args)}")
    if rows is None and expr.table_rows is not None:
        rows = np.arange(args[0].size)
    return expr._reduce(list(args), system, rows)


@dataclass
class EpigraphProgram:
    """Standalone reduction of one expression: minimize ``objective`` over ``system``.

    Variables ``0 .. arity-1`` are the expression's arguments.
    """

    system: ConstraintSystem
    objective: LinearForm
    arity: int


def epigraph_reduce(expr: ConvexExpr, sample: int | None = None) -> EpigraphProgram:
    system = ConstraintSystem()
    args = [system.new_vars(1) for _ in range(expr.arity)]
    rows = None if sample is None else np.array([sample])
    if rows is None and expr.table_rows is not None:
        raise ExprError("time-varying expression needs a sample index")
    top = expr._reduce(args, system, rows)
    return EpigraphProgram(system, top, expr.arity)


# ---------------------------------------------------------------------------
# JSON documents

_SIMPLE = {"max": Max, "sum": Sum, "sqnorm": SquaredNorm}


def expr_from_dict(doc: dict) -> ConvexExpr:
    kind = doc.get("kind")
    if kind == "affine":
        return Affine(doc["coeff"], doc.get("offset", 0.0))
    children = [expr_from_dict(c) for c in doc.get("children", [])]
    if kind in _SIMPLE:
        return _SIMPLE[kind](children)
    if kind in ("pos", "square", "scale"):
        if len(children) != 1:
            raise ExprError(f"'{kind}' node takes exactly one child")
        if kind == "pos":
            return PosPart(children[0])
        if kind == "square":
            return Square(children[0])
        return Scale(doc["scale"], children[0])
    raise ExprError(f"unknown expression kind {kind!r}")


def dumps(expr: ConvexExpr) -> str:
    return json.dumps(expr.to_dict())


def loads(text: str) -> ConvexExpr:
    return expr_from_dict(json.loads(text))
