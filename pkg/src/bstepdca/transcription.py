"""Direct transcription on a uniform grid.

States live on the ``N + 1`` nodes, controls are piecewise constant with one
sample per subinterval.  Integrals are left Riemann sums and ``x'`` is
replaced by forward differences.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    T: float
    N: int

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"grid needs at least 2 subintervals, got N={self.N}")
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got T={self.T}")

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.h


@dataclass
class DiscreteTrajectory:
    """State samples ``x`` of shape ``(N+1, n)`` and controls ``u`` of shape ``(N, m)``."""

    x: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        if self.x.shape[0] != self.u.shape[0] + 1:
            raise ValueError(f"state has {self.x.shape[0]} nodes but control has {self.u.shape[0]} samples")

    @property
    def N(self) -> int:
        return self.u.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    @classmethod
    def zeros(cls, N: int, n: int, m: int) -> DiscreteTrajectory:
        return cls(np.zeros((N + 1, n)), np.zeros((N, m)))

    def copy(self) -> DiscreteTrajectory:
        return DiscreteTrajectory(self.x.copy(), self.u.copy())

    def __add__(self, other: DiscreteTrajectory) -> DiscreteTrajectory:
        return DiscreteTrajectory(self.x + other.x, self.u + other.u)

    def __sub__(self, other: DiscreteTrajectory) -> DiscreteTrajectory:
        return DiscreteTrajectory(self.x - other.x, self.u - other.u)

    def __rmul__(self, a: float) -> DiscreteTrajectory:
        return DiscreteTrajectory(a * self.x, a * self.u)

    def samples(self) -> np.ndarray:
        """``(N, n+m)`` array whose row ``j`` is ``(x_j, u_j)``."""
        return np.hstack([self.x[:-1], self.u])

    def endpoints(self) -> np.ndarray:
        """``(x(0), x(T))`` as a vector of length ``2n``."""
        return np.concatenate([self.x[0], self.x[-1]])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.x.ravel(), self.u.ravel()])

    @classmethod
    def from_vector(cls, y, N: int, n: int, m: int) -> DiscreteTrajectory:
        y = np.asarray(y, dtype=float)
        nx = (N + 1) * n
        return cls(y[:nx].reshape(N + 1, n).copy(), y[nx : nx + N * m].reshape(N, m).copy())

    def allclose(self, other: DiscreteTrajectory, atol: float = 0.0) -> bool:
        return np.allclose(self.x, other.x, rtol=0, atol=atol) and np.allclose(self.u, other.u, rtol=0, atol=atol)


def forward_diff(traj: DiscreteTrajectory, grid: Grid) -> np.ndarray:
    """Row ``j`` is ``(x_{j+1} - x_j) / h``."""
    return np.diff(traj.x, axis=0) / grid.h


def riemann_sum(values, grid: Grid) -> float:
    values = np.asarray(values, dtype=float)
    if values.shape[0] != grid.N:
        raise ValueError(f"expected {grid.N} samples, got {values.shape[0]}")
    return float(grid.h * values.sum(axis=0))


def l2_norm_sq(traj_diff: DiscreteTrajectory, grid: Grid) -> float:
    """Discrete squared L2 norm of a (state, control) pair on left samples."""
    return grid.h * float(np.sum(traj_diff.x[:-1] ** 2) + np.sum(traj_diff.u**2))


# ---------------------------------------------------------------------------
# layout of the flattened decision vector


@dataclass(frozen=True)
class Layout:
    """Index map of ``DiscreteTrajectory.to_vector``."""

    N: int
    n: int
    m: int

    @property
    def size(self) -> int:
        return (self.N + 1) * self.n + self.N * self.m

    def x_index(self, j, i):
        return np.asarray(j) * self.n + np.asarray(i)

    def u_index(self, j, i):
        return (self.N + 1) * self.n + np.asarray(j) * self.m + np.asarray(i)


# ---------------------------------------------------------------------------
# CSV


def trajectory_to_csv(traj: DiscreteTrajectory, grid: Grid) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(traj.n)] + [f"u{i + 1}" for i in range(traj.m)])
    t = grid.nodes
    for j in range(traj.N + 1):
        controls = [repr(float(v)) for v in traj.u[j]] if j < traj.N else [""] * traj.m
        w.writerow([repr(float(t[j]))] + [repr(float(v)) for v in traj.x[j]] + controls)
    return buf.getvalue()


def trajectory_from_csv(text: str) -> tuple[np.ndarray, DiscreteTrajectory]:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    n = sum(1 for h in header if h.startswith("x"))
    m = sum(1 for h in header if h.startswith("u"))
    t = np.array([float(r[0]) for r in body])
    x = np.array([[float(v) for v in r[1 : 1 + n]] for r in body])
    u = np.array([[float(v) for v in r[1 + n : 1 + n + m]] for r in body[:-1]])
    return t, DiscreteTrajectory(x, u.reshape(len(body) - 1, m))
