from __future__ import annotations

import json

import numpy as np
import pytest

from wpshield.geom import check_overlap_property, region_contains
from wpshield.envs import ENV_NAMES, dump_env, make_env, rollout
from wpshield.model import TransitionDataset, fit
from wpshield.shield import ExactModel, Shield, ShieldConfig


def exact_shield(env, H=5):
    return Shield(ExactModel(env.exact), ShieldConfig(H=H), env.safe_region, env.action_box)


def test_road_full_throttle_reaches_limit_at_step_ten():
    env = make_env("road", 0)
    x = env.init(np.random.default_rng(0))
    for _ in range(10):
        x = env.step(x, [1.0], np.random.default_rng(0))
    assert x[1] == pytest.approx(1.0, abs=1e-12)
    assert env.is_safe(x)


@pytest.mark.parametrize("name", ENV_NAMES)
def test_initial_states_are_safe(name):
    env = make_env(name)
    for s in range(50):
        assert env.is_safe(env.init(np.random.default_rng(s)))


def test_obstacle_start_in_lower_piece():
    env = make_env("obstacle2d", 3)
    x = env.init(np.random.default_rng(0))
    assert region_contains(env.safe_region, x)
    assert x[1] <= 1.0


def test_unknown_name():
    with pytest.raises(ValueError):
        make_env("moon")


@pytest.mark.parametrize("name", ENV_NAMES)
def test_overlap_property(name):
    assert check_overlap_property(make_env(name).safe_region) == []


@pytest.mark.parametrize("name", ENV_NAMES)
def test_dump_env_round_trips_json(name):
    d = json.loads(dump_env(name))
    env = make_env(name)
    assert d["name"] == name and d["n"] == env.n and d["m"] == env.m
    assert d["episode_len"] == env.episode_len


@pytest.mark.parametrize("name", ENV_NAMES)
def test_noise_is_bounded(name):
    env = make_env(name)
    rng = np.random.default_rng(1)
    for _ in range(200):
        x = rng.normal(size=env.n)
        u = rng.uniform(env.action_box.lo, env.action_box.hi)
        nominal = env.exact.A @ x + env.exact.B @ u + env.exact.c
        assert np.all(np.abs(env.step(x, u, rng) - nominal) <= env.exact.eps + 1e-15)


@pytest.mark.parametrize("name", ENV_NAMES)
def test_dynamics_representable_by_model(name):
    env = make_env(name)
    rng = np.random.default_rng(2)
    data = TransitionDataset()
    for _ in range(1500):
        x = rng.uniform(-3, 3, env.n)
        u = rng.uniform(env.action_box.lo, env.action_box.hi)
        data.add(x, u, env.step(x, u, rng), 0.0)
    model = fit(data)
    x, u = rng.uniform(-2, 2, (100, env.n)), rng.uniform(-1, 1, (100, env.m))
    nominal = x @ env.exact.A.T + u @ env.exact.B.T + env.exact.c
    # prediction error shrinks to the noise mean, which is zero
    assert np.max(np.abs(model.predict(x, u) - nominal)) <= 0.02


def test_rollout_is_deterministic():
    env = make_env("noisy-road-2d")
    pol = lambda x: np.array([0.3, 0.2])
    a, b = rollout(env, pol, seed=5), rollout(env, pol, seed=5)
    assert np.array_equal(a.states, b.states) and a.ret == b.ret


def test_zero_policy_on_road():
    env = make_env("road")
    log = rollout(env, lambda x: np.zeros(1))
    assert log.n_violations == 0 and log.ret == pytest.approx(0.0, abs=1e-12)


def test_full_throttle_on_road_unshielded():
    log = rollout(make_env("road"), lambda x: np.ones(1))
    assert log.n_violations == 90
    assert not log.violations[:10].any() and log.violations[10:].all()


def test_full_throttle_on_road_exact_shield():
    env = make_env("road")
    log = rollout(env, lambda x: np.ones(1), exact_shield(env))
    assert log.n_violations == 0
    assert log.n_interventions > 0


def test_non_finite_action_rejected():
    with pytest.raises(ValueError):
        rollout(make_env("road"), lambda x: np.array([np.nan]))


def test_step_rows_shape():
    log = rollout(make_env("acc"), lambda x: np.zeros(1), max_steps=7)
    rows = log.step_rows()
    assert len(rows) == 7 and rows[0]["t"] == 0 and set(rows[0]) >= {"state", "action", "violation"}
