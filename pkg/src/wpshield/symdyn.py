"""Symbolic linear constraints over a trajectory and their weakest preconditions.

A constraint row reads

    F . chi_t + sum_j G_j . omega_j + h <= 0

where ``chi_t`` is the one remaining state symbol and ``omega_0..omega_{H-1}``
are the action symbols. :func:`wp_step` substitutes the linear dynamics for
``chi_t`` and folds the worst-case disturbance into ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .geom import Polytope, SafeRegion

SNAP_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class LinearDynamics:
    """``x' = A x + B u + c + delta`` with ``|delta_k| <= eps_k``."""

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    eps: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        c = np.asarray(self.c, dtype=float).reshape(-1)
        eps = np.broadcast_to(np.asarray(self.eps, dtype=float), (n,)).copy()
        if A.shape != (n, n) or c.shape != (n,):
            raise ValueError("A must be n x n and c length n")
        if np.any(eps < 0):
            raise ValueError("eps must be non-negative")
        for name, arr in (("A", A), ("B", B), ("c", c), ("eps", eps)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def step(self, x, u, delta=None) -> np.ndarray:
        x_next = self.A @ x + self.B @ u + self.c
        return x_next if delta is None else x_next + delta

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("A", "B", "c", "eps")}


@dataclass(frozen=True, eq=False)
class SymbolicConstraint:
    """Conjunction of rows over ``chi_t`` and the flattened actions.

    ``G`` has ``H * m`` columns, block ``j`` holding the coefficients of
    ``omega_j``. Rows for states ``chi_j`` with ``j < t`` wait in ``staged``
    until the backward pass reaches them.
    """

    F: np.ndarray
    G: np.ndarray
    h: np.ndarray
    t: int
    H: int
    m: int
    staged: tuple[tuple[int, np.ndarray, np.ndarray], ...] = field(default=())

    def __post_init__(self):
        if not 0 <= self.t <= self.H:
            raise ValueError(f"state index {self.t} outside [0, {self.H}]")

    @property
    def k(self) -> int:
        return self.F.shape[0]

    def G_block(self, j: int) -> np.ndarray:
        return self.G[:, j * self.m:(j + 1) * self.m]

    def conjuncts(self) -> list[tuple[int, np.ndarray, np.ndarray, float]]:
        """All rows as ``(state_index, F_row, G_row, h)``, staged ones included."""
        out = [(j, Fj[r], np.zeros(self.H * self.m), float(hj[r]))
               for j, Fj, hj in self.staged for r in range(Fj.shape[0])]
        out += [(self.t, self.F[r], self.G[r], float(self.h[r])) for r in range(self.k)]
        return sorted(out, key=lambda c: c[0])

    def evaluate(self, x_t, actions) -> np.ndarray:
        """Row values for a concrete ``chi_t`` and flattened action sequence."""
        return self.F @ np.asarray(x_t, float) + self.G @ np.asarray(actions, float).reshape(-1) + self.h


@dataclass(frozen=True, eq=False)
class DisjunctiveConstraint:
    disjuncts: tuple[SymbolicConstraint, ...]

    def __post_init__(self):
        ds = tuple(self.disjuncts)
        if not ds:
            raise ValueError("DisjunctiveConstraint needs at least one disjunct")
        if len({(d.t, d.H, d.m) for d in ds}) != 1:
            raise ValueError("disjuncts must share t, H and m")
        object.__setattr__(self, "disjuncts", ds)

    @property
    def H(self) -> int:
        return self.disjuncts[0].H

    @property
    def m(self) -> int:
        return self.disjuncts[0].m

    def __len__(self):
        return len(self.disjuncts)

    def __iter__(self):
        return iter(self.disjuncts)

    def satisfied_by(self, actions, tol: float = 1e-9) -> list[int]:
        """Indices of disjuncts whose rows all hold for ``actions`` (state-free only)."""
        a = np.asarray(actions, float).reshape(-1)
        return [i for i, d in enumerate(self.disjuncts) if np.all(d.G @ a + d.h <= tol)]


def init_horizon_constraint(piece: Polytope, H: int, m: int) -> SymbolicConstraint:
    """``P chi_j + q <= 0`` for ``j = 1..H``, staged for backward elimination."""
    if H < 1:
        raise ValueError("horizon must be at least 1")
    P, q = np.array(piece.P), np.array(piece.q)
    staged = tuple((j, P, q) for j in range(1, H))
    return SymbolicConstraint(P, np.zeros((P.shape[0], H * m)), q, H, H, m, staged)


def wp_step(phi: SymbolicConstraint, dyn: LinearDynamics) -> SymbolicConstraint:
    """Eliminate ``chi_t`` by substituting ``A chi_{t-1} + B omega_{t-1} + c + delta*``.

    ``delta*_k = sign(F_k) eps_k`` maximizes each row, so its contribution is
    ``|F_k| eps_k``.
    """
    if phi.t == 0:
        raise ValueError("no state symbol left to eliminate")
    t = phi.t - 1
    F = np.where(np.abs(phi.F) < SNAP_TOL, 0.0, phi.F)
    G = phi.G.copy()
    G[:, t * phi.m:(t + 1) * phi.m] += F @ dyn.B
    h = phi.h + F @ dyn.c + np.abs(F) @ dyn.eps
    F = F @ dyn.A

    keep = []
    for j, Fj, hj in phi.staged:
        if j == t:
            F = np.vstack([F, Fj])
            G = np.vstack([G, np.zeros((Fj.shape[0], G.shape[1]))])
            h = np.concatenate([h, hj])
        else:
            keep.append((j, Fj, hj))
    return replace(phi, F=F, G=G, h=h, t=t, staged=tuple(keep))


def substitute_state(phi: SymbolicConstraint, x0) -> SymbolicConstraint:
    """Replace ``chi_0`` by a concrete state, leaving an action-only constraint."""
    if phi.t != 0 or phi.staged:
        raise ValueError("substitution needs a constraint over chi_0 only")
    x0 = np.asarray(x0, float).reshape(-1)
    return replace(phi, F=np.zeros_like(phi.F), h=phi.h + phi.F @ x0)


def wp_piece(piece: Polytope, dyn: LinearDynamics, H: int, x0) -> SymbolicConstraint:
    phi = init_horizon_constraint(piece, H, dyn.m)
    for _ in range(H):
        phi = wp_step(phi, dyn)
    return substitute_state(phi, x0)


def wp_horizon(region: SafeRegion, dyn: LinearDynamics, H: int, x0) -> DisjunctiveConstraint:
    """Per-piece H-step weakest precondition at ``x0``, one disjunct per piece."""
    if region.n != dyn.n:
        raise ValueError(f"region dimension {region.n} does not match dynamics {dyn.n}")
    return DisjunctiveConstraint(tuple(wp_piece(p, dyn, H, x0) for p in region.pieces))


def _term(coef: float, var: str) -> str:
    return f"{coef:+.6g}*{var}"


def format_constraint(
    phi: SymbolicConstraint,
    state_names: Sequence[str] | None = None,
    action_names: Sequence[str] | None = None,
) -> str:
    """One inequality per line, ``sum coef*var <= rhs``."""
    n = phi.F.shape[1]
    state_names = state_names or [f"x{i}" for i in range(n)]
    action_names = action_names or [f"u{i}" for i in range(phi.m)]
    lines = []
    for j, Frow, Grow, h in phi.conjuncts():
        terms = [_term(c, f"{s}_{j}") for c, s in zip(Frow, state_names) if c != 0.0]
        for step in range(phi.H):
            for i, a in enumerate(action_names):
                c = Grow[step * phi.m + i]
                if c != 0.0:
                    terms.append(_term(c, f"{a}_{step}"))
        lhs = " ".join(terms) if terms else "0"
        lines.append(f"{lhs} <= {-h:.6g}")
    return "\n".join(lines)
