"""Model-based safe learning loop and its unshielded ablation.

Each epoch collects real episodes (shielded from the second epoch on), refits
the dynamics model on everything seen so far, then improves a linear-in-
features policy with the cross-entropy method inside the learned model.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .envs import EnvSpec, RolloutLog, rollout
from .model import DynamicsModel, TransitionDataset, fit
from .shield import Shield, ShieldConfig

logger = logging.getLogger(__name__)

STATE_CLIP = 1e6


def state_features(x: np.ndarray) -> np.ndarray:
    """``[1, x, tanh(x)]`` along the last axis."""
    x = np.asarray(x, dtype=float)
    ones = np.ones(x.shape[:-1] + (1,))
    return np.concatenate([ones, x, np.tanh(x)], axis=-1)


@dataclass
class Policy:
    W: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    sigma_expl: float = 0.1

    @classmethod
    def random(cls, env: EnvSpec, rng: np.random.Generator, scale: float = 0.1,
               sigma_expl: float = 0.1) -> Policy:
        W = rng.normal(0.0, scale, size=(env.m, 1 + 2 * env.n))
        return cls(W, env.action_box.lo, env.action_box.hi, sigma_expl)

    def mean_action(self, x) -> np.ndarray:
        return np.clip(state_features(x) @ self.W.T, self.lo, self.hi)

    def act(self, x, rng: np.random.Generator | None = None) -> np.ndarray:
        a = state_features(x) @ self.W.T
        if rng is not None and self.sigma_expl > 0:
            a = a + rng.normal(0.0, self.sigma_expl, size=a.shape)
        return np.clip(a, self.lo, self.hi)


@dataclass
class TrainConfig:
    epochs: int = 30
    real_episodes: int = 10
    sim_episodes: int = 70
    population: int = 64
    elite_frac: float = 0.1
    cem_iterations: int = 8
    cem_sigma: float = 0.5
    cem_sigma_floor: float = 0.02
    sigma_expl: float = 0.1
    capacity: int = 100_000
    shield: ShieldConfig = field(default_factory=ShieldConfig)
    seed: int = 0
    verbose: bool = False

    def __post_init__(self):
        for name in ("epochs", "real_episodes", "sim_episodes", "population", "capacity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.cem_iterations < 0:
            raise ValueError("cem_iterations must be non-negative")


@dataclass
class EpisodeRecord:
    epoch: int
    episode: int
    ret: float
    violations: int
    cumulative_violations: int
    interventions: int
    steps: int
    shielded: bool
    goal_reached: bool = False


@dataclass
class Metrics:
    episodes: list[EpisodeRecord] = field(default_factory=list)
    residual_bounds: list[list[float]] = field(default_factory=list)
    shield_calls: int = 0
    shield_seconds: float = 0.0
    backups: int = 0
    wall_time: float = 0.0
    shield_log: list[dict] = field(default_factory=list)

    @property
    def total_violations(self) -> int:
        return self.episodes[-1].cumulative_violations if self.episodes else 0

    def violations_after(self, epoch: int) -> int:
        return sum(e.violations for e in self.episodes if e.epoch > epoch)

    @property
    def shielded_steps(self) -> int:
        return sum(e.steps for e in self.episodes if e.shielded)

    @property
    def zeta(self) -> float:
        """Fraction of shielded real steps where the shield changed the action."""
        steps = self.shielded_steps
        if steps == 0:
            return 0.0
        return sum(e.interventions for e in self.episodes if e.shielded) / steps

    def epoch_returns(self) -> dict[int, float]:
        out: dict[int, list[float]] = {}
        for e in self.episodes:
            out.setdefault(e.epoch, []).append(e.ret)
        return {k: float(np.mean(v)) for k, v in sorted(out.items())}

    def final_return(self, last: int = 5) -> float:
        rets = list(self.epoch_returns().values())
        return float(np.mean(rets[-last:])) if rets else float("nan")


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def _simulate(
    M: DynamicsModel,
    env: EnvSpec,
    Ws: np.ndarray,
    starts: np.ndarray,
    noise: np.ndarray,
) -> np.ndarray:
    """Mean simulated return of each policy in ``Ws`` (shape ``(P, m, F)``).

    All candidates share the same start states and noise draws.
    """
    P, K = Ws.shape[0], starts.shape[0]
    x = np.broadcast_to(starts, (P, K, env.n)).copy()
    total = np.zeros((P, K))
    lo, hi = env.action_box.lo, env.action_box.hi
    with np.errstate(all="ignore"):
        for t in range(noise.shape[0]):
            u = np.clip(np.einsum("pkf,pmf->pkm", state_features(x), Ws), lo, hi)
            total += env.reward(x, u)
            nxt = M.predict(x.reshape(P * K, env.n), u.reshape(P * K, env.m)).reshape(P, K, env.n)
            x = np.clip(nxt + noise[t], -STATE_CLIP, STATE_CLIP)
    ret = total.mean(axis=1)
    return np.where(np.isfinite(ret), ret, -np.inf)


def optimize_policy(
    M: DynamicsModel,
    pi: Policy,
    env: EnvSpec,
    cfg: TrainConfig,
    starts: np.ndarray,
    seed: int = 0,
) -> Policy:
    """Cross-entropy search over the policy weights in the learned model."""
    if cfg.cem_iterations == 0:
        return pi
    rng = np.random.default_rng(seed)
    shape = pi.W.shape
    mu = pi.W.reshape(-1).copy()
    sigma = np.full(mu.shape, cfg.cem_sigma)
    n_elite = max(2, int(round(cfg.elite_frac * cfg.population)))
    n_eval = max(1, math.ceil(cfg.sim_episodes / cfg.cem_iterations))
    for _ in range(cfg.cem_iterations):
        idx = rng.integers(0, len(starts), size=n_eval)
        noise = rng.uniform(-1.0, 1.0, size=(env.episode_len, n_eval, env.n)) * M.residual_bound
        pop = mu + sigma * rng.standard_normal((cfg.population, mu.size))
        pop[0] = mu
        scores = _simulate(M, env, pop.reshape((cfg.population,) + shape), starts[idx], noise)
        elite = pop[np.argsort(-scores, kind="stable")[:n_elite]]
        mu = elite.mean(axis=0)
        sigma = np.maximum(elite.std(axis=0), cfg.cem_sigma_floor)
    return replace(pi, W=mu.reshape(shape))


def _train(env: EnvSpec, cfg: TrainConfig, shielded: bool):
    t_start = time.perf_counter()
    seed = cfg.seed
    pi = Policy.random(env, _rng(seed, 0), sigma_expl=cfg.sigma_expl)
    data = TransitionDataset(cfg.capacity)
    starts: list[np.ndarray] = []
    metrics = Metrics()
    logs: list[RolloutLog] = []
    models: list[DynamicsModel] = []
    M: DynamicsModel | None = None
    cumulative = 0

    for epoch in range(1, cfg.epochs + 1):
        shield = None
        if shielded and M is not None:
            shield = Shield(M, cfg.shield, env.safe_region, env.action_box,
                            verbose=cfg.verbose, action_names=env.action_names)
        for ep in range(cfg.real_episodes):
            act_rng = _rng(seed, 1, epoch, ep)
            if epoch == 1:
                # warm-up: no model yet, so cover the action box uniformly
                behave = lambda x: act_rng.uniform(env.action_box.lo, env.action_box.hi)
            else:
                behave = lambda x: pi.act(x, act_rng)
            log = rollout(env, behave, shield, seed=_rng(seed, 2, epoch, ep))
            data.extend(log.states, log.actions, log.next_states, log.rewards)
            starts.append(log.states[0])
            cumulative += log.n_violations
            metrics.episodes.append(EpisodeRecord(
                epoch, ep, log.ret, log.n_violations, cumulative,
                log.n_interventions, log.steps, shield is not None, log.goal_reached,
            ))
            logs.append(log)
        if shield is not None:
            metrics.shield_calls += shield.stats.calls
            metrics.shield_seconds += shield.stats.seconds
            metrics.backups += shield.stats.backups
            for entry in shield.stats.log:
                metrics.shield_log.append({"epoch": epoch, **entry})

        M = fit(data, seed=int(_rng(seed, 3, epoch).integers(2**31)))
        models.append(M)
        metrics.residual_bounds.append(M.residual_bound.tolist())
        if epoch < cfg.epochs:
            pi = optimize_policy(M, pi, env, cfg, np.array(starts),
                                 seed=int(_rng(seed, 4, epoch).integers(2**31)))
        logger.info("%s seed %d epoch %d: return %.3f, violations %d",
                    env.name, seed, epoch, metrics.epoch_returns()[epoch], cumulative)
    metrics.wall_time = time.perf_counter() - t_start
    return pi, metrics, logs, models


def spice_train(env: EnvSpec, cfg: TrainConfig):
    """Shielded loop. Returns ``(policy, metrics, rollout logs, per-epoch models)``."""
    return _train(env, cfg, shielded=True)


def baseline_train(env: EnvSpec, cfg: TrainConfig):
    """Same loop with the shield never applied."""
    return _train(env, cfg, shielded=False)
