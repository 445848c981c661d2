"""Learned one-step dynamics: quadratic ridge regression with a residual bound.

The model predicts the state increment ``x' - x`` from a degree-2 polynomial
expansion of the standardized input ``z = (x, u)``. Because the basis is
quadratic, the Jacobian is affine in ``z`` and the Hessian of every output is
constant, which gives :meth:`DynamicsModel.approximate` an exact Taylor
remainder bound over a box-shaped trust region.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .symdyn import LinearDynamics

N_MIN = 50
RIDGE = 1e-4
HOLDOUT = 0.2
QUANTILE = 99.0
BOUND_SCALE = 1.5
MIN_RADIUS = 1e-6


class InsufficientData(ValueError):
    pass


class TransitionDataset:
    """FIFO buffer of ``(x, u, x_next, r)`` records."""

    def __init__(self, capacity: int = 100_000):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._records: deque = deque(maxlen=capacity)
        self._dims: tuple[int, int] | None = None

    def add(self, x, u, x_next, r: float):
        x = np.asarray(x, dtype=float).reshape(-1)
        u = np.asarray(u, dtype=float).reshape(-1)
        x_next = np.asarray(x_next, dtype=float).reshape(-1)
        dims = (x.shape[0], u.shape[0])
        if self._dims is None:
            self._dims = dims
        elif dims != self._dims or x_next.shape[0] != dims[0]:
            raise ValueError(f"record dimensions {dims} do not match dataset {self._dims}")
        self._records.append((x, u, x_next, float(r)))

    def extend(self, xs, us, x_nexts, rs):
        for rec in zip(xs, us, x_nexts, rs):
            self.add(*rec)

    def __len__(self) -> int:
        return len(self._records)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        if not self._records:
            raise InsufficientData("dataset is empty")
        xs, us, xn, rs = zip(*self._records)
        return np.array(xs), np.array(us), np.array(xn), np.array(rs)


def _pairs(d: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(d)


def features(s: np.ndarray) -> np.ndarray:
    """``[1, s, s_i s_j for i <= j]`` row-wise for standardized inputs ``s``."""
    s = np.atleast_2d(s)
    i, j = _pairs(s.shape[1])
    return np.hstack([np.ones((s.shape[0], 1)), s, s[:, i] * s[:, j]])


@dataclass(eq=False)
class DynamicsModel:
    """Quadratic model of the state increment, one output per state dimension.

    ``coef`` has shape ``(n_features, n)``; ``mean`` and ``scale`` standardize
    the stacked input ``(x, u)``.
    """

    coef: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    residual_bound: np.ndarray
    n: int
    m: int
    max_step_change: np.ndarray
    _hess: np.ndarray | None = field(default=None, init=False, repr=False)

    def _split_coef(self):
        d = self.n + self.m
        lin = self.coef[1:1 + d]
        quad = self.coef[1 + d:]
        return lin, quad

    def predict(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        single = x.ndim == 1
        z = np.hstack([np.atleast_2d(x), np.atleast_2d(u)])
        out = np.atleast_2d(x) + features((z - self.mean) / self.scale) @ self.coef
        return out[0] if single else out

    def hessians(self) -> np.ndarray:
        """Hessians in raw ``(x, u)`` coordinates, shape ``(n, d, d)``."""
        if self._hess is None:
            self._hess = self._compute_hessians()
            self._hess.setflags(write=False)
        return self._hess

    def _compute_hessians(self) -> np.ndarray:
        d = self.n + self.m
        _, quad = self._split_coef()
        i, j = _pairs(d)
        Hs = np.zeros((self.n, d, d))
        for k in range(self.n):
            M = np.zeros((d, d))
            M[i, j] += quad[:, k]
            Hs[k] = (M + M.T) / np.outer(self.scale, self.scale)
        return Hs

    def jacobian(self, x, u) -> np.ndarray:
        """``d predict / d (x, u)``, shape ``(n, n + m)``."""
        z = np.concatenate([np.asarray(x, float), np.asarray(u, float)])
        lin, _ = self._split_coef()
        J = (lin / self.scale[:, None]).T + self.hessians() @ (z - self.mean)
        J[:, :self.n] += np.eye(self.n)
        return J

    def default_trust_radius(self, H: int, action_extent) -> np.ndarray:
        rho = np.concatenate([H * self.max_step_change, np.asarray(action_extent, float)])
        return np.maximum(rho, MIN_RADIUS)

    def approximate(self, x0, u0_star, trust_radius) -> LinearDynamics:
        """First-order expansion at ``(x0, u0_star)`` with a validated error box.

        ``eps_k`` adds the held-out residual bound to the worst second-order
        term over the trust box, ``0.5 * rho^T |H_k| rho``.
        """
        rho = np.asarray(trust_radius, dtype=float).reshape(-1)
        if rho.shape[0] != self.n + self.m or np.any(rho <= 0):
            raise ValueError("trust radius must be positive for every state and action dim")
        x0 = np.asarray(x0, dtype=float)
        u0 = np.asarray(u0_star, dtype=float)
        J = self.jacobian(x0, u0)
        A, B = J[:, :self.n], J[:, self.n:]
        c = self.predict(x0, u0) - A @ x0 - B @ u0
        remainder = 0.5 * np.einsum("i,kij,j->k", rho, np.abs(self.hessians()), rho)
        return LinearDynamics(A, B, c, self.residual_bound + remainder)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "coef": self.coef.tolist(),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "residual_bound": self.residual_bound.tolist(),
            "max_step_change": self.max_step_change.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> DynamicsModel:
        return cls(
            coef=np.array(d["coef"], dtype=float),
            mean=np.array(d["mean"], dtype=float),
            scale=np.array(d["scale"], dtype=float),
            residual_bound=np.array(d["residual_bound"], dtype=float),
            n=int(d["n"]),
            m=int(d["m"]),
            max_step_change=np.array(d["max_step_change"], dtype=float),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> DynamicsModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _ridge(Phi: np.ndarray, Y: np.ndarray, lam: float) -> np.ndarray:
    reg = np.full(Phi.shape[1], lam)
    reg[0] = 0.0
    return np.linalg.solve(Phi.T @ Phi + np.diag(reg), Phi.T @ Y)


def fit(data: TransitionDataset, seed: int = 0, ridge: float = RIDGE) -> DynamicsModel:
    """Fit on a seeded 80% split, bound residuals on the held-out 20%."""
    if len(data) < N_MIN:
        raise InsufficientData(f"need at least {N_MIN} transitions, have {len(data)}")
    xs, us, xn, _ = data.arrays()
    n, m = xs.shape[1], us.shape[1]
    z = np.hstack([xs, us])
    target = xn - xs

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(z))
    n_hold = max(1, int(round(HOLDOUT * len(z))))
    hold, train = perm[:n_hold], perm[n_hold:]

    mean = z[train].mean(axis=0)
    scale = z[train].std(axis=0)
    scale[scale < 1e-8] = 1.0
    Phi = features((z - mean) / scale)
    coef = _ridge(Phi[train], target[train], ridge)

    resid = np.abs(Phi[hold] @ coef - target[hold])
    bound = BOUND_SCALE * np.percentile(resid, QUANTILE, axis=0)
    return DynamicsModel(
        coef=coef, mean=mean, scale=scale, residual_bound=bound, n=n, m=m,
        max_step_change=np.abs(target).max(axis=0),
    )
