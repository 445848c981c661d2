"""Benchmark environments: point-mass integrators with polyhedral safe sets.

All built-ins use a 0.1 s step and bounded uniform noise, so every true
transition is exactly ``A x + B u + c + delta`` with ``|delta| <= eps``.
That linear form is exposed as :attr:`EnvSpec.exact` for oracle-model runs.

State and reward functions operate on the last axis so they also accept
batches of states, which the policy optimizer uses for simulated rollouts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geom import Polytope, SafeRegion, region_contains
from .project import ActionBox
from .symdyn import LinearDynamics

DT = 0.1


@dataclass(frozen=True, eq=False)
class EnvSpec:
    name: str
    n: int
    m: int
    exact: LinearDynamics
    reward: Callable[[np.ndarray, np.ndarray], np.ndarray]
    init: Callable[[np.random.Generator], np.ndarray]
    safe_region: SafeRegion
    action_box: ActionBox
    episode_len: int
    goal: Callable[[np.ndarray], bool] | None = None
    state_names: tuple[str, ...] = ()
    action_names: tuple[str, ...] = ()
    notes: dict = field(default_factory=dict)

    def step(self, x, u, rng: np.random.Generator) -> np.ndarray:
        """True transition; noise is uniform on ``[-eps, eps]`` per dimension."""
        noise = np.zeros(self.n)
        live = self.exact.eps > 0
        if np.any(live):
            noise[live] = rng.uniform(-self.exact.eps[live], self.exact.eps[live])
        return self.exact.step(np.asarray(x, float), np.asarray(u, float), noise)

    def is_safe(self, x) -> bool:
        return region_contains(self.safe_region, x)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "m": self.m,
            "state_names": list(self.state_names),
            "action_names": list(self.action_names),
            "episode_len": self.episode_len,
            "dt": DT,
            "dynamics": self.exact.to_dict(),
            "safe_region": self.safe_region.to_dict(),
            "action_box": self.action_box.to_dict(),
            **self.notes,
        }


def _double_integrator_1d(noise: float) -> LinearDynamics:
    return LinearDynamics([[1.0, DT], [0.0, 1.0]], [[0.0], [DT]], [0.0, 0.0], [0.0, noise])


def _double_integrator_2d(noise: float) -> LinearDynamics:
    A = np.eye(4)
    A[0, 2] = A[1, 3] = DT
    B = np.zeros((4, 2))
    B[2, 0] = B[3, 1] = DT
    return LinearDynamics(A, B, np.zeros(4), [0.0, 0.0, noise, noise])


def _road(name: str, noise: float) -> EnvSpec:
    def reward(x, u):
        return DT * x[..., 1] - 0.01 * np.sum(u ** 2, axis=-1)

    return EnvSpec(
        name=name, n=2, m=1,
        exact=_double_integrator_1d(noise),
        reward=reward,
        init=lambda rng: np.zeros(2),
        safe_region=SafeRegion((Polytope([[0.0, 1.0], [0.0, -1.0]], [-1.0, -1.0]),)),
        action_box=ActionBox([-1.0], [1.0]),
        episode_len=100,
        state_names=("x", "v"), action_names=("a",),
    )


def _planar(name: str, noise: float, region: SafeRegion, start: Sequence[float]) -> EnvSpec:
    goal_xy = np.array([3.0, 3.0])
    start = np.array(start, dtype=float)

    def reward(x, u):
        return -0.1 * np.linalg.norm(x[..., :2] - goal_xy, axis=-1)

    def init(rng):
        x = np.zeros(4)
        x[:2] = start + rng.uniform(-0.05, 0.05, size=2)
        return x

    return EnvSpec(
        name=name, n=4, m=2,
        exact=_double_integrator_2d(noise),
        reward=reward, init=init,
        safe_region=region,
        action_box=ActionBox([-1.0, -1.0], [1.0, 1.0]),
        episode_len=200,
        goal=lambda x: bool(np.linalg.norm(np.asarray(x)[:2] - goal_xy) <= 0.3),
        state_names=("x", "y", "vx", "vy"), action_names=("ax", "ay"),
        notes={"goal": goal_xy.tolist(), "goal_radius": 0.3},
    )


def _obstacle2d() -> EnvSpec:
    region = SafeRegion((
        Polytope([[-1.0, 0.0, 0.0, 0.0]], [2.0]),   # x >= 2
        Polytope([[0.0, 1.0, 0.0, 0.0]], [-1.0]),   # y <= 1
    ))
    return _planar("obstacle2d", 0.0, region, (0.0, 0.5))


def _noisy_road_2d() -> EnvSpec:
    inf = None
    corridor_a = Polytope.box([0.0, 0.0, inf, inf], [4.0, 1.2, inf, inf])
    corridor_b = Polytope.box([2.0, 0.0, inf, inf], [4.0, 4.0, inf, inf])
    # start off the x = 0 wall so the jittered initial state is always safe
    return _planar("noisy-road-2d", 0.01, SafeRegion((corridor_a, corridor_b)), (0.5, 0.5))


def _acc() -> EnvSpec:
    # d' = d + 0.1 v_r, v_r' = v_r + 0.1 (a_lead - a), a_lead ~ U[-0.1, 0.1]
    dyn = LinearDynamics([[1.0, DT], [0.0, 1.0]], [[0.0], [-DT]], [0.0, 0.0], [0.0, DT * 0.1])

    def reward(x, u):
        return -((x[..., 0] - 2.0) ** 2)

    return EnvSpec(
        name="acc", n=2, m=1,
        exact=dyn, reward=reward,
        init=lambda rng: np.array([3.0, 0.0]),
        safe_region=SafeRegion((Polytope([[-1.0, 0.0]], [0.5]),)),
        action_box=ActionBox([-1.0], [1.0]),
        episode_len=150,
        state_names=("d", "vr"), action_names=("a",),
        notes={"lead_accel_bound": 0.1},
    )


_BUILTINS: dict[str, Callable[[], EnvSpec]] = {
    "road": lambda: _road("road", 0.0),
    "noisy-road": lambda: _road("noisy-road", 0.01),
    "obstacle2d": _obstacle2d,
    "noisy-road-2d": _noisy_road_2d,
    "acc": _acc,
}

ENV_NAMES = tuple(_BUILTINS)


def make_env(name: str, seed: int | None = None) -> EnvSpec:
    """Built-in environment by name.

    The returned EnvSpec is seed-independent; randomness lives in the generator
    handed to :meth:`EnvSpec.step` and ``init``. ``seed`` is accepted for
    call-site symmetry with :func:`rollout`.
    """
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {', '.join(ENV_NAMES)}") from None


def dump_env(name: str) -> str:
    return json.dumps(make_env(name).to_dict(), indent=2)


@dataclass
class RolloutLog:
    states: np.ndarray
    proposed: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    violations: np.ndarray
    interventions: np.ndarray
    goal_reached: bool = False

    @property
    def steps(self) -> int:
        return len(self.rewards)

    @property
    def ret(self) -> float:
        return float(np.sum(self.rewards))

    @property
    def n_violations(self) -> int:
        return int(np.sum(self.violations))

    @property
    def n_interventions(self) -> int:
        return int(np.sum(self.interventions))

    def step_rows(self) -> list[dict]:
        rows = []
        for t in range(self.steps):
            rows.append({
                "t": t,
                "state": self.states[t].tolist(),
                "proposed": self.proposed[t].tolist(),
                "action": self.actions[t].tolist(),
                "reward": float(self.rewards[t]),
                "violation": bool(self.violations[t]),
                "intervened": bool(self.interventions[t]),
            })
        return rows


Shield = Callable[[np.ndarray, np.ndarray], "tuple[np.ndarray, bool]"]


def rollout(
    env: EnvSpec,
    policy: Callable[[np.ndarray], np.ndarray],
    shield: Shield | None = None,
    seed: int | np.random.Generator = 0,
    max_steps: int | None = None,
) -> RolloutLog:
    """Run one episode on the true dynamics.

    ``shield(x, u_star)`` returns ``(u, intervened)``. Unsafe successor states
    are counted but do not end the episode.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    T = env.episode_len if max_steps is None else min(max_steps, env.episode_len)
    xs = np.zeros((T, env.n))
    xn = np.zeros((T, env.n))
    us_star = np.zeros((T, env.m))
    us = np.zeros((T, env.m))
    rs = np.zeros(T)
    viol = np.zeros(T, dtype=bool)
    inter = np.zeros(T, dtype=bool)
    goal = False

    x = np.asarray(env.init(rng), dtype=float)
    for t in range(T):
        u_star = np.asarray(policy(x), dtype=float).reshape(env.m)
        if not np.all(np.isfinite(u_star)):
            raise ValueError(f"policy produced a non-finite action at step {t}: {u_star}")
        if shield is not None:
            u, inter[t] = shield(x, u_star)
        else:
            u = u_star
        u = env.action_box.clip(u)
        x_next = env.step(x, u, rng)
        xs[t], us_star[t], us[t], xn[t] = x, u_star, u, x_next
        rs[t] = float(env.reward(x, u))
        viol[t] = not env.is_safe(x_next)
        if env.goal is not None and env.goal(x_next):
            goal = True
        x = x_next
    return RolloutLog(xs, us_star, us, rs, xn, viol, inter, goal)
