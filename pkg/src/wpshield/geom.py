"""Polytopes ``P x + q <= 0`` and finite unions of them."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import qp

MEMBERSHIP_TOL = 1e-9
OVERLAP_TOL = 1e-6
SLACK_CEILING = 1e6


class DimensionError(ValueError):
    """Raised when a point or polytope has the wrong state dimension."""


@dataclass(frozen=True, eq=False)
class Polytope:
    P: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if P.shape[0] < 1 or P.shape[0] != q.shape[0]:
            raise ValueError(f"P has {P.shape[0]} rows but q has {q.shape[0]} entries")
        if np.any(np.all(P == 0.0, axis=1)):
            raise ValueError("Polytope rows must not be all-zero")
        P.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)

    @property
    def n(self) -> int:
        return self.P.shape[1]

    @classmethod
    def box(cls, lo: Sequence[float | None], hi: Sequence[float | None]) -> Polytope:
        """Axis-aligned box; ``None`` leaves that side open."""
        rows, consts = [], []
        n = len(lo)
        for i, (a, b) in enumerate(zip(lo, hi)):
            if b is not None:
                r = np.zeros(n)
                r[i] = 1.0
                rows.append(r)
                consts.append(-b)
            if a is not None:
                r = np.zeros(n)
                r[i] = -1.0
                rows.append(r)
                consts.append(a)
        return cls(np.array(rows), np.array(consts))

    def stack(self, other: Polytope) -> Polytope:
        _check_same_dim(self, other)
        return Polytope(np.vstack([self.P, other.P]), np.concatenate([self.q, other.q]))

    def to_dict(self) -> dict:
        return {"P": self.P.tolist(), "q": self.q.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Polytope:
        return cls(np.array(d["P"], dtype=float), np.array(d["q"], dtype=float))


@dataclass(frozen=True, eq=False)
class SafeRegion:
    pieces: tuple[Polytope, ...]

    def __post_init__(self):
        pieces = tuple(self.pieces)
        if not pieces:
            raise ValueError("SafeRegion needs at least one piece")
        n = pieces[0].n
        if any(p.n != n for p in pieces):
            raise DimensionError("all pieces of a SafeRegion must share one dimension")
        object.__setattr__(self, "pieces", pieces)

    @property
    def n(self) -> int:
        return self.pieces[0].n

    def __len__(self) -> int:
        return len(self.pieces)

    def to_dict(self) -> dict:
        return {"pieces": [p.to_dict() for p in self.pieces]}

    @classmethod
    def from_dict(cls, d: dict) -> SafeRegion:
        return cls(tuple(Polytope.from_dict(p) for p in d["pieces"]))


def _check_same_dim(a: Polytope, b: Polytope):
    if a.n != b.n:
        raise DimensionError(f"dimension mismatch: {a.n} vs {b.n}")


def _as_point(p: Polytope, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != p.n:
        raise DimensionError(f"point has dimension {x.shape[0]}, polytope has {p.n}")
    return x


def contains(p: Polytope, x, tol: float = MEMBERSHIP_TOL) -> bool:
    x = _as_point(p, x)
    return bool(np.all(p.P @ x + p.q <= tol))


def region_contains(r: SafeRegion, x, tol: float = MEMBERSHIP_TOL) -> bool:
    return any(contains(p, x, tol) for p in r.pieces)


def containing_pieces(r: SafeRegion, x, tol: float = MEMBERSHIP_TOL) -> list[int]:
    return [i for i, p in enumerate(r.pieces) if contains(p, x, tol)]


def chebyshev_feasibility(
    p: Polytope, ceiling: float = SLACK_CEILING
) -> tuple[np.ndarray, float] | None:
    """Deepest point of ``p`` measured in row-normalized slack.

    Maximizes ``t`` subject to ``P_i x + q_i <= -t ||P_i||`` and ``t <= ceiling``.
    Returns ``(center, t)`` or None when the polytope is empty. A positive
    ``t`` means the polytope has an interior; an unbounded interior reports
    ``t == ceiling``.
    """
    n = p.n
    norms = np.linalg.norm(p.P, axis=1)
    C = np.zeros((p.P.shape[0] + 1, n + 1))
    C[:-1, :n] = p.P
    C[:-1, n] = norms
    C[-1, n] = 1.0
    d = np.append(-p.q, ceiling)
    g = np.zeros(n + 1)
    g[-1] = -1.0
    # x = 0 with the most negative admissible t is always feasible
    t0 = min(float(np.min(-p.q / norms)), ceiling)
    C, d = qp._normalize_rows(C, d)
    res = qp.active_set(np.zeros((n + 1, n + 1)), g, C, d, np.append(np.zeros(n), t0),
                        max_iter=100 * (n + 1) + 4 * C.shape[0])
    if not res.ok:
        raise qp.SolverFailure(f"Chebyshev LP ended with status {res.status.value}")
    center, t = res.z[:n], float(res.z[n])
    if t < -MEMBERSHIP_TOL:
        return None
    return center, t


def overlap(p1: Polytope, p2: Polytope, tol: float = OVERLAP_TOL) -> bool:
    """True iff the intersection of ``p1`` and ``p2`` has positive volume."""
    res = chebyshev_feasibility(p1.stack(p2))
    return res is not None and res[1] > tol


def check_overlap_property(r: SafeRegion) -> list[tuple[int, int]]:
    """Pairs of pieces that touch without overlapping.

    An empty list means every pair of intersecting pieces shares a
    full-dimensional region, so a trajectory can hand over between them.
    """
    flagged = []
    for i, j in itertools.combinations(range(len(r.pieces)), 2):
        res = chebyshev_feasibility(r.pieces[i].stack(r.pieces[j]))
        if res is not None and res[1] <= OVERLAP_TOL:
            flagged.append((i, j))
    return flagged
