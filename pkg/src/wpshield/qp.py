"""Dense primal active-set solver for small convex QPs and LPs.

Solves

    minimize    0.5 z^T Q z + g^T z
    subject to  C z <= d

with Q positive semidefinite (Q = 0 gives an LP). Problems here have at most
a few dozen variables, so every iteration works with dense numpy factors.

A feasible starting point is required by :func:`active_set`. :func:`solve`
wraps it with a slack-variable phase 1 so callers only need a guess.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-9
_CURV_TOL = 1e-12
_STEP_TOL = 1e-12
_MULT_TOL = 1e-10
_DEC_TOL = 1e-14


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


class SolverFailure(RuntimeError):
    """Raised when the active-set loop hits its iteration cap."""


@dataclass
class QPResult:
    z: np.ndarray | None
    status: Status
    objective: float
    iterations: int
    working_set: tuple[int, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def _normalize_rows(C: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(C, axis=1)
    norms[norms == 0.0] = 1.0
    return C / norms[:, None], d / norms


def _null_space(CW: np.ndarray, nvar: int) -> np.ndarray:
    if CW.shape[0] == 0:
        return np.eye(nvar)
    q, _ = np.linalg.qr(CW.T, mode="complete")
    return q[:, CW.shape[0]:]


def _kkt_step(Q, CW, grad):
    """Equality-constrained Newton step and multipliers for positive definite ``Q``.

    Rows only enter the working set when they block a step lying in the null
    space of the current rows, so they stay independent; a singular system
    returns ``(None, None)`` and the caller falls back to the null-space path.
    """
    n, k = Q.shape[0], CW.shape[0]
    if k == 0:
        return -np.linalg.solve(Q, grad), np.zeros(0)
    K = np.zeros((n + k, n + k))
    K[:n, :n] = Q
    K[:n, n:] = CW.T
    K[n:, :n] = CW
    try:
        sol = np.linalg.solve(K, np.concatenate([-grad, np.zeros(k)]))
    except np.linalg.LinAlgError:
        return None, None
    return sol[:n], sol[n:]


def _objective(Q, g, z) -> float:
    return float(0.5 * z @ Q @ z + g @ z)


def active_set(
    Q: np.ndarray,
    g: np.ndarray,
    C: np.ndarray,
    d: np.ndarray,
    z0: np.ndarray,
    max_iter: int = 200,
    working: list[int] | None = None,
) -> QPResult:
    """Primal active-set iterations from a feasible point ``z0``.

    Rows of ``C`` should be normalized; tolerances are absolute in the row
    units. Zero-curvature directions in the reduced Hessian are followed as
    rays, which is what makes the LP case work.
    """
    nvar = z0.shape[0]
    z = z0.astype(float).copy()
    try:
        np.linalg.cholesky(Q)
        definite = True
    except np.linalg.LinAlgError:
        definite = False
    W: list[int] = list(working or [])
    inactive = np.ones(C.shape[0], dtype=bool)
    inactive[W] = False
    dropped = -1
    settled = False

    for it in range(1, max_iter + 1):
        grad = Q @ z + g
        CW = C[W]
        p = None
        lam = None
        ray = False
        if len(W) >= nvar or (settled and definite):
            # a vertex, or already at the subspace minimizer after a full
            # step: the true step is zero, whatever round-off says
            p = np.zeros(nvar)
        elif definite:
            p, lam = _kkt_step(Q, CW, grad)
        if p is None:
            p = np.zeros(nvar)
            Z = _null_space(CW, nvar)
            if Z.shape[1] > 0 and definite:
                p = -Z @ np.linalg.solve(Z.T @ Q @ Z, Z.T @ grad)
            elif Z.shape[1] > 0:
                gr = Z.T @ grad
                Hr = Z.T @ Q @ Z
                w, V = np.linalg.eigh(Hr)
                gv = V.T @ gr
                flat = w <= _CURV_TOL * max(1.0, float(np.abs(w).max(initial=0.0)))
                if np.any(flat & (np.abs(gv) > _STEP_TOL)):
                    p = -Z @ (V[:, flat] @ gv[flat])
                    ray = True
                else:
                    curved = ~flat
                    p = -Z @ (V[:, curved] @ (gv[curved] / w[curved]))

        # stationary once the step cannot lower the objective above round-off
        decrease = -float(grad @ p)
        if ray:
            decrease = np.inf if decrease > 0 else 0.0
        f = _objective(Q, g, z)
        if (np.linalg.norm(p) <= _STEP_TOL * max(1.0, np.linalg.norm(z))
                or decrease <= _DEC_TOL * max(1.0, abs(f))):
            if not W:
                return QPResult(z, Status.OPTIMAL, f, it, ())
            if lam is None:
                lam, *_ = np.linalg.lstsq(CW.T, -grad, rcond=None)
            j = int(np.argmin(lam))
            if lam[j] >= -_MULT_TOL:
                return QPResult(z, Status.OPTIMAL, f, it, tuple(W))
            dropped = W[j]
            settled = False
            inactive[dropped] = True
            W.pop(j)
            continue

        Cp = C @ p
        cand = inactive & (Cp > _STEP_TOL)
        alpha = np.inf if ray else 1.0
        block = -1
        if np.any(cand):
            idx = np.flatnonzero(cand)
            slack = np.maximum(d[idx] - C[idx] @ z, 0.0)
            ratios = slack / Cp[idx]
            k = int(np.argmin(ratios))
            if ratios[k] < alpha:
                alpha = float(ratios[k])
                block = int(idx[k])
        if not np.isfinite(alpha):
            return QPResult(None, Status.UNBOUNDED, -np.inf, it, tuple(W))
        if block == dropped and alpha * np.linalg.norm(p) <= _STEP_TOL:
            # the released row blocks at once: its multiplier sign was round-off
            W.append(block)
            inactive[block] = False
            return QPResult(z, Status.OPTIMAL, f, it, tuple(W))
        dropped = -1
        z = z + alpha * p
        settled = block < 0 and not ray
        if block >= 0:
            W.append(block)
            inactive[block] = False

    logger.warning("active-set iteration cap %d reached", max_iter)
    return QPResult(z, Status.ITERATION_LIMIT, _objective(Q, g, z), max_iter, tuple(W))


def find_feasible(
    C: np.ndarray,
    d: np.ndarray,
    z0: np.ndarray,
    soft: np.ndarray | None = None,
    max_iter: int = 200,
    tol: float = FEAS_TOL,
) -> tuple[np.ndarray | None, Status]:
    """Phase 1: minimize a shared slack on the ``soft`` rows from ``z0``.

    Rows outside ``soft`` must already hold at ``z0``; they stay hard.
    Returns the point and OPTIMAL, or None and INFEASIBLE.
    """
    if soft is None:
        soft = np.ones(C.shape[0], dtype=bool)
    viol = C @ z0 - d
    s0 = max(0.0, float(viol[soft].max(initial=0.0)))
    if s0 <= tol:
        return z0, Status.OPTIMAL
    nvar = z0.shape[0]
    Cs = np.zeros((C.shape[0] + 1, nvar + 1))
    Cs[:-1, :nvar] = C
    Cs[:-1, nvar] = -soft.astype(float)
    Cs[-1, nvar] = -1.0
    ds = np.append(d, 0.0)
    g = np.zeros(nvar + 1)
    g[-1] = 1.0
    res = active_set(np.zeros((nvar + 1, nvar + 1)), g, Cs, ds,
                     np.append(z0, s0), max_iter=max_iter)
    if res.status is Status.ITERATION_LIMIT:
        return None, Status.ITERATION_LIMIT
    if res.z is None or res.z[-1] > tol:
        return None, Status.INFEASIBLE
    return res.z[:nvar], Status.OPTIMAL


def solve(
    Q: np.ndarray,
    g: np.ndarray,
    C: np.ndarray,
    d: np.ndarray,
    z0: np.ndarray,
    hard: np.ndarray | None = None,
    max_iter: int = 200,
) -> QPResult:
    """Two-phase solve. ``hard`` marks rows already satisfied by ``z0``."""
    C, d = _normalize_rows(np.asarray(C, float), np.asarray(d, float))
    soft = None if hard is None else ~np.asarray(hard, bool)
    z, status = find_feasible(C, d, np.asarray(z0, float), soft, max_iter=max_iter)
    if z is None:
        if status is Status.ITERATION_LIMIT:
            logger.warning("phase 1 did not converge")
        return QPResult(None, status, np.inf, 0)
    return active_set(Q, g, C, d, z, max_iter=max_iter)
