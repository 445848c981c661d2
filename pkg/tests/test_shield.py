from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import corner_rollouts, random_dynamics, random_region, stays_in_piece
from wpshield.envs import make_env, rollout
from wpshield.project import ActionBox
from wpshield.shield import ExactModel, Shield, ShieldConfig, wp_shield
from wpshield.symdyn import LinearDynamics, wp_horizon


def exact(env):
    return ExactModel(env.exact)


def test_car_projection_with_disturbance():
    # the worked car example carries a 0.01 velocity disturbance: noisy-road
    env = make_env("noisy-road")
    res = wp_shield(exact(env), [0.0, 0.9], [1.0], ShieldConfig(H=2), env.safe_region,
                    ActionBox([0.0], [1.0]))
    assert res.u0[0] == pytest.approx(0.8, abs=1e-6)
    assert res.intervened and not res.backup


def test_noiseless_road_needs_no_margin():
    env = make_env("road")
    res = wp_shield(exact(env), [0.0, 0.9], [1.0], ShieldConfig(H=2), env.safe_region,
                    ActionBox([0.0], [1.0]))
    assert res.u0[0] == pytest.approx(1.0, abs=1e-9) and not res.intervened


@pytest.mark.parametrize("name,x", [
    ("road", [0.0, 0.0]),
    ("noisy-road", [5.0, 0.1]),
    ("obstacle2d", [3.0, -2.0, 0.0, 0.0]),
    ("noisy-road-2d", [3.0, 2.0, 0.0, 0.0]),
    ("acc", [3.0, 0.0]),
])
def test_interior_zero_action_untouched(name, x):
    env = make_env(name)
    res = wp_shield(exact(env), x, np.zeros(env.m), ShieldConfig(), env.safe_region, env.action_box)
    assert np.array_equal(res.u0, np.zeros(env.m)) and not res.intervened


def test_obstacle_keeps_lower_piece_feasible():
    env = make_env("obstacle2d")
    cfg = ShieldConfig()
    x = np.array([1.99, 0.5, 0.0, 0.0])
    phi = wp_horizon(env.safe_region, env.exact, cfg.H, x)
    assert len(phi) == 2
    res = wp_shield(exact(env), x, [0.0, 1.0], cfg, env.safe_region, env.action_box)
    assert res.disjunct_index == 1
    # close to the y = 1 wall and climbing: upward thrust is cut to keep y <= 1
    x = np.array([1.99, 0.97, 0.0, 0.2])
    res = wp_shield(exact(env), x, [0.0, 1.0], cfg, env.safe_region, env.action_box)
    assert res.disjunct_index == 1 and res.intervened and res.u0[1] < 0.0
    d = wp_horizon(env.safe_region, env.exact, cfg.H, x).disjuncts[1]
    assert np.all(d.G @ res.full_sequence.reshape(-1) + d.h <= 1e-7)


def test_backup_steers_back_from_just_outside():
    # just above y = 1 and left of x = 2: no action fixes the next step, but the
    # backup must still push down instead of hovering outside the safe set
    env = make_env("obstacle2d")
    x = np.array([1.5, 1.041, 0.0, 0.0])
    res = wp_shield(exact(env), x, [0.0, 1.0], ShieldConfig(), env.safe_region, env.action_box)
    assert res.backup and res.u0[1] == pytest.approx(-1.0, abs=1e-6)
    sh = Shield(exact(env), ShieldConfig(), env.safe_region, env.action_box)
    safe = []
    for _ in range(10):
        u, _ = sh(x, np.array([0.0, 1.0]))
        x = env.exact.step(x, u)
        safe.append(env.is_safe(x))
    # back inside within a few steps and kept there
    assert all(safe[4:])


def test_out_of_box_proposal_is_clipped():
    env = make_env("road")
    res = wp_shield(exact(env), [0.0, 0.0], [5.0], ShieldConfig(), env.safe_region, env.action_box)
    assert env.action_box.contains(res.u0)


def test_backup_disabled_returns_clipped_proposal():
    env = make_env("road")
    # far above the speed limit: no plan can recover in one step
    x = [0.0, 3.0]
    on = wp_shield(exact(env), x, [0.5], ShieldConfig(H=1), env.safe_region, env.action_box)
    off = wp_shield(exact(env), x, [0.5], ShieldConfig(H=1, backup=False), env.safe_region,
                    env.action_box)
    assert on.backup and on.u0[0] == pytest.approx(-1.0)
    assert off.backup and off.slack == np.inf and off.u0[0] == 0.5


def test_rejects_zero_horizon():
    with pytest.raises(ValueError):
        ShieldConfig(H=0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_returned_plan_is_safe_under_corner_noise(seed):
    rng = np.random.default_rng(seed)
    n, m, H = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 4))
    dyn = random_dynamics(rng, n, m)
    x0 = rng.uniform(-0.5, 0.5, n)
    region = random_region(rng, x0)
    box = ActionBox(-np.ones(m), np.ones(m))
    res = wp_shield(ExactModel(dyn), x0, rng.uniform(-1, 1, m), ShieldConfig(H=H), region, box)
    assert box.contains(res.u0)
    if res.backup:
        return
    piece = region.pieces[res.disjunct_index]
    assert stays_in_piece(piece, corner_rollouts(dyn, x0, res.full_sequence), tol=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_non_interference(seed):
    rng = np.random.default_rng(seed)
    dyn = random_dynamics(rng, 2, 1, eps_range=(0.0, 0.01))
    x0 = rng.uniform(-0.2, 0.2, 2)
    region = random_region(rng, x0, pieces=1)
    box = ActionBox([-1.0], [1.0])
    cfg = ShieldConfig(H=2)
    first = wp_shield(ExactModel(dyn), x0, rng.uniform(-1, 1, 1), cfg, region, box)
    if first.backup:
        return
    again = wp_shield(ExactModel(dyn), x0, first.u0, cfg, region, box)
    assert not again.intervened
    np.testing.assert_allclose(again.u0, first.u0, atol=1e-6)


@pytest.mark.parametrize("name", ["road", "noisy-road"])
def test_exact_model_random_policy_is_safe(name):
    env = make_env(name)
    total = 0
    for s in range(20):
        act = np.random.default_rng([7, s])
        sh = Shield(exact(env), ShieldConfig(), env.safe_region, env.action_box)
        total += rollout(env, lambda x: act.uniform(-1, 1, env.m), sh, seed=s).n_violations
    assert total == 0


def test_longer_horizon_closes_the_planar_gap():
    # a five-step look-ahead can accept speeds toward a wall that no later
    # five-step plan can shed; fifteen steps is enough braking distance
    env = make_env("noisy-road-2d")
    total = 0
    for s in range(5):
        act = np.random.default_rng([7, s])
        sh = Shield(exact(env), ShieldConfig(H=15), env.safe_region, env.action_box)
        total += rollout(env, lambda x: act.uniform(-1, 1, env.m), sh, seed=s).n_violations
    assert total == 0


def test_latency_on_obstacle():
    env = make_env("obstacle2d")
    sh = Shield(exact(env), ShieldConfig(), env.safe_region, env.action_box)
    rng = np.random.default_rng(0)
    rollout(env, lambda x: rng.uniform(-1, 1, 2), sh, seed=0)
    assert sh.stats.calls == env.episode_len
    assert sh.stats.mean_latency <= 0.01


def test_verbose_log_records_constraints():
    env = make_env("road")
    sh = Shield(exact(env), ShieldConfig(H=2), env.safe_region, env.action_box, verbose=True,
                action_names=env.action_names)
    sh([0.0, 0.9], [1.0])
    entry = sh.stats.log[0]
    assert entry["disjunct"] == 0 and entry["action"][0] <= 1.0
    assert "a_0" in entry["constraints"][0]


def test_scalar_disturbance_model():
    dyn = LinearDynamics([[1.0]], [[1.0]], [0.0], [0.1])
    from wpshield.geom import Polytope, SafeRegion
    region = SafeRegion((Polytope([[1.0], [-1.0]], [-1.0, -1.0]),))
    res = wp_shield(ExactModel(dyn), [0.5], [1.0], ShieldConfig(H=1), region, ActionBox([-1.0], [1.0]))
    assert res.u0[0] == pytest.approx(0.4, abs=1e-9)
