"""Projection of a proposed action onto a disjunctive safe-action constraint."""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np

from . import qp
from .symdyn import DisjunctiveConstraint

logger = logging.getLogger(__name__)

PROJ_TOL = 1e-6
FEAS_TOL = 1e-7
FUTURE_REG = 1e-8
SLACK_TIE = 1e-9
PENALTY = 1e4
SNAP_RADIUS = 1e-4


@dataclass(frozen=True, eq=False)
class ActionBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("ActionBox needs lo <= hi elementwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def m(self) -> int:
        return self.lo.shape[0]

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    def clip(self, u) -> np.ndarray:
        return np.clip(np.asarray(u, dtype=float), self.lo, self.hi)

    def contains(self, u) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lo) and np.all(u <= self.hi))

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass
class ProjectionResult:
    u0: np.ndarray
    full_sequence: np.ndarray
    disjunct_index: int
    objective: float
    intervened: bool
    slack: float = 0.0
    backup: bool = False


@functools.lru_cache(maxsize=64)
def _box_rows_cached(lo: tuple, hi: tuple, H: int) -> tuple[np.ndarray, np.ndarray]:
    nv = H * len(lo)
    rows = np.vstack([np.eye(nv), -np.eye(nv)])
    rhs = np.concatenate([np.tile(hi, H), -np.tile(lo, H)])
    rows.setflags(write=False)
    rhs.setflags(write=False)
    return rows, rhs


def _box_rows(box: ActionBox, H: int) -> tuple[np.ndarray, np.ndarray]:
    return _box_rows_cached(tuple(box.lo), tuple(box.hi), H)


def _objective_terms(u0_star: np.ndarray, H: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    # 0.5 z'Qz + g'z == ||z_0 - u0*||^2 + FUTURE_REG * sum_{j>=1} ||z_j||^2 - const
    diag = np.full(H * m, 2.0 * FUTURE_REG)
    diag[:m] = 2.0
    g = np.zeros(H * m)
    g[:m] = -2.0 * u0_star
    return np.diag(diag), g


def _row_infeasible(Gmat: np.ndarray, h: np.ndarray, box: ActionBox, H: int) -> bool:
    """Cheap certificate: some single row cannot be met anywhere in the box."""
    lo, hi = np.tile(box.lo, H), np.tile(box.hi, H)
    row_min = h + np.minimum(Gmat * lo, Gmat * hi).sum(axis=1)
    return bool(np.any(row_min > FEAS_TOL))


def _start_point(Gmat: np.ndarray, h: np.ndarray, box: ActionBox, u0_star, H: int) -> np.ndarray:
    """``(u0*, tail)`` with the tail at zero or at the box corner that pushes the
    rows violated at zero downward, whichever violates less. Often feasible
    outright, which skips phase 1."""
    m = box.m
    lo, hi = np.tile(box.lo, H - 1), np.tile(box.hi, H - 1)
    tail = np.clip(np.zeros((H - 1) * m), lo, hi)
    z = np.concatenate([u0_star, tail])
    if H == 1:
        return z
    r = Gmat @ z + h
    if np.all(r <= 0.0):
        return z
    push = (r > 0.0) @ Gmat[:, m:]
    corner = np.where(push > 0.0, lo, np.where(push < 0.0, hi, tail))
    alt = np.concatenate([u0_star, corner])
    return alt if np.max(Gmat @ alt + h) < np.max(r) else z


def _penalty_solve(Gmat, h, box: ActionBox, H: int, Q, g, z0) -> np.ndarray | None:
    """Exact-penalty shortcut for an infeasible start.

    Minimizes the projection objective plus ``PENALTY * s + s^2`` under
    ``G z + h <= s`` (rows normalized), starting feasible at the current
    violation. An optimum with ``s = 0`` solves the original problem; any
    other outcome returns None and the caller runs the two-phase solve.
    """
    nv = Gmat.shape[1]
    k = Gmat.shape[0]
    Bc, bd = _box_rows(box, H)
    Gn, hn = qp._normalize_rows(Gmat, h)
    C = np.zeros((k + Bc.shape[0] + 1, nv + 1))
    C[:k, :nv] = Gn
    C[:k, nv] = -1.0
    C[k:-1, :nv] = Bc
    C[-1, nv] = -1.0
    d = np.concatenate([-hn, bd, [0.0]])
    Qs = np.pad(Q, ((0, 1), (0, 1)))
    Qs[-1, -1] = 2.0
    gs = np.append(g, PENALTY)
    s0 = float(np.max(Gn @ z0 + hn))
    res = qp.active_set(Qs, gs, C, d, np.append(z0, s0), max_iter=100 * nv + 2 * C.shape[0])
    if not res.ok or res.z[-1] > 0.0:
        return None
    return res.z[:nv]


def _snap_first_action(Gmat, h, box: ActionBox, u0_star, H: int, z: np.ndarray) -> np.ndarray:
    """Return ``u0_star`` itself when it admits a feasible tail.

    The tail regularizer can pull the first action a hair off a proposal
    that is already safe; fixing it at the proposal restores non-interference.
    """
    m = box.m
    gap = np.linalg.norm(z[:m] - u0_star)
    if gap == 0.0 or gap > SNAP_RADIUS:
        return z
    rhs = -(h + Gmat[:, :m] @ u0_star)
    if H == 1:
        return np.copy(u0_star) if np.all(rhs >= -FEAS_TOL) else z
    Gt = Gmat[:, m:]
    fixed = ~np.any(Gt != 0.0, axis=1)
    if np.any(rhs[fixed] < -FEAS_TOL):
        return z
    Bc, bd = _box_rows(box, H - 1)
    C, d = qp._normalize_rows(np.vstack([Gt[~fixed], Bc]), np.concatenate([rhs[~fixed], bd]))
    soft = np.zeros(C.shape[0], dtype=bool)
    soft[: int(np.sum(~fixed))] = True
    tail, status = qp.find_feasible(C, d, box.clip(z[m:].reshape(H - 1, m)).reshape(-1),
                                    soft=soft, max_iter=100 * H * m + 2 * C.shape[0], tol=FEAS_TOL)
    if status is not qp.Status.OPTIMAL:
        return z
    return np.concatenate([u0_star, box.clip(tail.reshape(H - 1, m)).reshape(-1)])


def qp_solve(
    Gmat: np.ndarray,
    h: np.ndarray,
    box: ActionBox,
    u0_star,
    H: int,
) -> tuple[np.ndarray, float] | None:
    """Closest feasible first action to ``u0_star`` under ``Gmat z + h <= 0``.

    Returns ``(sequence, squared distance of the first action)`` or None when
    the constraints are infeasible inside the box. Raises
    :class:`qp.SolverFailure` if the iteration cap is hit.
    """
    m = box.m
    u0_star = box.clip(np.asarray(u0_star, dtype=float).reshape(m))
    Gmat = np.asarray(Gmat, dtype=float).reshape(-1, H * m)
    h = np.asarray(h, dtype=float)
    if _row_infeasible(Gmat, h, box, H):
        return None
    Bc, bd = _box_rows(box, H)
    C = np.vstack([Gmat, Bc])
    d = np.concatenate([-h, bd])
    hard = np.zeros(C.shape[0], dtype=bool)
    hard[Gmat.shape[0]:] = True
    z0 = _start_point(Gmat, h, box, u0_star, H)
    Q, g = _objective_terms(u0_star, H, m)
    if np.any(Gmat @ z0 + h > 0.0):
        z = _penalty_solve(Gmat, h, box, H, Q, g, z0)
        if z is not None:
            z = _snap_first_action(Gmat, h, box, u0_star, H, box.clip(z.reshape(H, m)).reshape(-1))
            return z, float(np.sum((z[:m] - u0_star) ** 2))
    res = qp.solve(Q, g, C, d, z0, hard=hard, max_iter=100 * H * m + 2 * C.shape[0])
    if res.status is qp.Status.INFEASIBLE:
        return None
    if not res.ok:
        raise qp.SolverFailure(f"projection QP ended with status {res.status.value}")
    z = _snap_first_action(Gmat, h, box, u0_star, H, box.clip(res.z.reshape(H, m)).reshape(-1))
    return z, float(np.sum((z[:m] - u0_star) ** 2))


def _result(seq, H, m, index, obj, slack=0.0, backup=False) -> ProjectionResult:
    seq = np.asarray(seq).reshape(H, m)
    return ProjectionResult(
        u0=seq[0].copy(), full_sequence=seq, disjunct_index=index, objective=obj,
        intervened=backup or obj > PROJ_TOL ** 2, slack=slack, backup=backup,
    )


def project_action(
    phi: DisjunctiveConstraint, u0_star, box: ActionBox, H: int
) -> ProjectionResult | None:
    """Solve one QP per disjunct and keep the closest feasible first action."""
    best = None
    for i, dj in enumerate(phi):
        try:
            sol = qp_solve(dj.G, dj.h, box, u0_star, H)
        except qp.SolverFailure as exc:
            logger.warning("disjunct %d treated as infeasible: %s", i, exc)
            continue
        if sol is None:
            continue
        if best is None or sol[1] < best[2]:
            best = (i, sol[0], sol[1])
    if best is None:
        return None
    i, seq, obj = best
    return _result(seq, H, box.m, i, obj)


def _relaxed_solve(Gmat, h, box: ActionBox, u0_star, H: int) -> tuple[np.ndarray, float, float]:
    """Least shared violation first, then the closest first action.

    Stage one is the LP ``min s`` over ``G z + h <= s``, ``s >= 0`` and the
    box. Stage two projects ``u0_star`` onto ``G z + h <= s*``. Rows no
    action can move (such as the next state) are left out of both stages:
    they would pin ``s`` at their own violation and make every action look
    equally bad. They still count in the reported slack.
    """
    m, nv = box.m, H * box.m
    G_all, h_all = Gmat, h
    reach = np.abs(Gmat) @ np.tile(box.hi - box.lo, H)
    live = reach > FEAS_TOL
    z = np.concatenate([u0_star, np.clip(np.zeros(nv - m), np.tile(box.lo, H - 1),
                                         np.tile(box.hi, H - 1))])
    if np.any(live):
        Gmat, h = Gmat[live], h[live]
        k = Gmat.shape[0]
        Bc, bd = _box_rows(box, H)
        C = np.zeros((k + Bc.shape[0] + 1, nv + 1))
        C[:k, :nv] = Gmat
        C[:k, nv] = -1.0
        C[k:-1, :nv] = Bc
        C[-1, nv] = -1.0
        d = np.concatenate([-h, bd, [0.0]])
        Cn, dn = qp._normalize_rows(C, d)
        g = np.zeros(nv + 1)
        g[-1] = 1.0
        s0 = max(0.0, float(np.max(Gmat @ z + h)))
        lp = qp.active_set(np.zeros((nv + 1, nv + 1)), g, Cn, dn, np.append(z, s0),
                           max_iter=100 * (nv + 1) + 2 * C.shape[0])
        if lp.z is None:
            raise qp.SolverFailure("slack LP returned no point")
        if not lp.ok:
            logger.warning("slack LP stopped with status %s", lp.status.value)
        z = box.clip(lp.z[:nv].reshape(H, m)).reshape(-1)
        s_star = max(0.0, float(np.max(Gmat @ z + h)))
        try:
            closest = qp_solve(Gmat, h - s_star - SLACK_TIE, box, u0_star, H)
        except qp.SolverFailure:
            closest = None
        if closest is not None:
            z = closest[0]
    slack = max(0.0, float(np.max(G_all @ z + h_all, initial=0.0)))
    return z, slack, float(np.sum((z[:m] - u0_star) ** 2))


def backup_action(phi: DisjunctiveConstraint, u0_star, box: ActionBox, H: int,
                  try_exact: bool = True) -> ProjectionResult:
    """Least-violating action sequence when no disjunct is satisfiable.

    Each infeasible disjunct is relaxed to ``G z + h <= s`` with the least
    achievable ``s >= 0``; feasible ones are solved exactly.
    The disjunct needing the least slack wins, then the closest action.
    Callers that already know every disjunct is infeasible pass
    ``try_exact=False`` to skip the exact solves.
    """
    u0_star = box.clip(np.asarray(u0_star, dtype=float).reshape(box.m))
    best = None
    for i, dj in enumerate(phi):
        exact = None
        if try_exact:
            try:
                exact = qp_solve(dj.G, dj.h, box, u0_star, H)
            except qp.SolverFailure:
                pass
        if exact is not None:
            z, slack, obj = exact[0], 0.0, exact[1]
        else:
            z, slack, obj = _relaxed_solve(dj.G, dj.h, box, u0_star, H)
        if (best is None or slack < best[0] - SLACK_TIE
                or (slack <= best[0] + SLACK_TIE and obj < best[1])):
            best = (slack, obj, i, z)
    slack, obj, i, z = best
    return _result(z, H, box.m, i, obj, slack=slack, backup=True)
