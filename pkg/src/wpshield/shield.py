"""Runtime shield: linearize the model, propagate the safe set back, project."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .geom import SafeRegion
from .project import ActionBox, ProjectionResult, backup_action, project_action
from .symdyn import LinearDynamics, format_constraint, wp_horizon

logger = logging.getLogger(__name__)


class Linearizable(Protocol):
    def approximate(self, x0, u0_star, trust_radius) -> LinearDynamics: ...


class ExactModel:
    """Oracle model that already is linear with a known disturbance bound."""

    def __init__(self, dyn: LinearDynamics):
        self.dyn = dyn

    def approximate(self, x0, u0_star, trust_radius=None) -> LinearDynamics:
        return self.dyn

    def default_trust_radius(self, H, action_extent):
        return None


@dataclass
class ShieldConfig:
    H: int = 5
    trust_radius: np.ndarray | None = None
    backup: bool = True

    def __post_init__(self):
        if self.H < 1:
            raise ValueError("shield horizon must be at least 1")


@dataclass
class ShieldStats:
    calls: int = 0
    interventions: int = 0
    backups: int = 0
    seconds: float = 0.0
    log: list = field(default_factory=list)

    @property
    def mean_latency(self) -> float:
        return self.seconds / self.calls if self.calls else 0.0


def wp_shield(
    M: Linearizable,
    x0,
    u0_star,
    cfg: ShieldConfig,
    safe_region: SafeRegion,
    action_box: ActionBox,
    trace: list | None = None,
) -> ProjectionResult:
    """Closest action to ``u0_star`` that keeps an H-step safe plan available.

    With backup enabled the call always returns an action inside the box. With
    backup disabled, an infeasible constraint yields the clipped proposal
    flagged through ``backup=True`` and ``slack=inf``. When ``trace`` is a
    list, the action-space constraint is appended to it.
    """
    x0 = np.asarray(x0, dtype=float)
    u_raw = np.asarray(u0_star, dtype=float).reshape(action_box.m)
    u_star = action_box.clip(u_raw)
    if not np.array_equal(u_star, u_raw):
        logger.debug("proposed action %s clipped to the action box", u_raw)
    rho = cfg.trust_radius
    if rho is None:
        rho = M.default_trust_radius(cfg.H, action_box.extent)
    dyn = M.approximate(x0, u_star, rho)
    phi = wp_horizon(safe_region, dyn, cfg.H, x0)
    if trace is not None:
        trace.append(phi)
    res = project_action(phi, u_star, action_box, cfg.H)
    if res is None:
        if cfg.backup:
            res = backup_action(phi, u_star, action_box, cfg.H, try_exact=False)
        else:
            seq = np.tile(u_star, (cfg.H, 1))
            res = ProjectionResult(u_star, seq, -1, 0.0, False, slack=np.inf, backup=True)
    return res


class Shield:
    """Callable wrapper for rollouts, ``(x, u_star) -> (u, intervened)``."""

    def __init__(self, M: Linearizable, cfg: ShieldConfig, safe_region: SafeRegion,
                 action_box: ActionBox, verbose: bool = False,
                 action_names: tuple[str, ...] = ()):
        self.M = M
        self.cfg = cfg
        self.safe_region = safe_region
        self.action_box = action_box
        self.verbose = verbose
        self.action_names = action_names or None
        self.stats = ShieldStats()

    def __call__(self, x, u_star):
        trace = [] if self.verbose else None
        t0 = time.perf_counter()
        res = wp_shield(self.M, x, u_star, self.cfg, self.safe_region, self.action_box, trace)
        dt = time.perf_counter() - t0
        st = self.stats
        st.calls += 1
        st.seconds += dt
        st.interventions += int(res.intervened)
        st.backups += int(res.backup)
        if self.verbose:
            st.log.append({
                "state": np.asarray(x, float).tolist(),
                "proposed": np.asarray(u_star, float).tolist(),
                "action": res.u0.tolist(),
                "disjunct": res.disjunct_index, "objective": res.objective,
                "slack": res.slack, "backup": res.backup, "seconds": dt,
                "constraints": [format_constraint(d, action_names=self.action_names)
                                for d in trace[0]],
            })
        return res.u0, res.intervened
