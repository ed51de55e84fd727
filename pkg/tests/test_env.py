"""Environment tests: dynamics, margins, layouts, and replay."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shieldrl import env


def nav_config(**kw):
    return env.EnvConfig(task="navigation", **kw)


def circle_config(**kw):
    return env.EnvConfig(task="circle", **kw)


def unit_phi():
    return env.HiddenParams(1.0, 1.0, 1.0, 1.0)


def make_state(position, velocity=(0.0, 0.0), goal=(1.0, 1.0), obstacles=()):
    """Hand-built navigation state (obstacles given in world coordinates)."""
    p = np.asarray(position, dtype=np.float64)
    obs = np.asarray(obstacles, dtype=np.float64).reshape(-1, 2)
    rel = obs - p
    order = np.argsort(np.linalg.norm(rel, axis=1), kind="stable") if len(obs) else []
    return env.EnvState(
        position=p,
        velocity=np.asarray(velocity, dtype=np.float64),
        goal_rel=np.asarray(goal, dtype=np.float64) - p,
        sensor=rel[order].reshape(-1) if len(obs) else np.zeros(0),
    )


# ---------------------------------------------------------------------------
# Point-mass dynamics
# ---------------------------------------------------------------------------


def test_equilibrium_zero_action_zero_velocity_holds_position():
    cfg = nav_config()
    state = make_state((0.3, -0.4), obstacles=[(1.5, 1.5)])
    tr = env.step(state, np.zeros(2), unit_phi(), cfg)
    np.testing.assert_array_equal(tr.next_state.position, state.position)
    np.testing.assert_array_equal(tr.next_state.velocity, np.zeros(2))
    # static world, same position => identical sensor reading
    np.testing.assert_array_equal(tr.next_state.sensor, state.sensor)


def test_mass_scale_halves_initial_acceleration():
    # From rest the damping and friction terms vanish, so the velocity
    # after one step is exactly dt * a / (mass * mass_scale).
    cfg = nav_config()
    state = make_state((0.0, 0.0), obstacles=[(1.5, 1.5)])
    action = np.array([0.8, -0.6])
    light = env.step(state, action, env.HiddenParams(1.0, 1.0, 1.0, 1.0), cfg)
    heavy = env.step(state, action, env.HiddenParams(1.0, 2.0, 1.0, 1.0), cfg)
    np.testing.assert_allclose(
        light.next_state.velocity, 2.0 * heavy.next_state.velocity, rtol=1e-15
    )
    expected = cfg.dt * action / cfg.mass
    np.testing.assert_allclose(light.next_state.velocity, expected, rtol=1e-15)


def test_position_step_never_exceeds_velocity_cap():
    # 1e5 chained transitions under random actions and hidden parameters.
    cfg = nav_config(horizon=400)
    rng = np.random.default_rng(7)
    bound = cfg.max_feature_step()
    worst = 0.0
    for _ in range(250):
        phi = env.sample_phi(rng, ((0.15, 0.3), (0.3, 1.7), (1.7, 2.5)))
        state = env.reset(cfg, phi, rng)
        for _ in range(cfg.horizon):
            action = rng.uniform(-3.0, 3.0, size=2)
            tr = env.step(state, action, phi, cfg)
            moved = float(np.linalg.norm(tr.next_state.position - state.position))
            worst = max(worst, moved)
            state = tr.next_state
    assert worst <= bound + 1e-9


def test_speed_stays_capped_under_saturated_thrust():
    cfg = nav_config()
    phi = env.HiddenParams(0.3, 0.3, 0.3, 0.3)  # light and slippery
    state = make_state((0.0, 0.0), obstacles=[(1.9, 1.9)])
    for _ in range(200):
        state = env.step(state, np.array([1.0, 1.0]), phi, cfg).next_state
        assert np.linalg.norm(state.velocity) <= cfg.v_max + 1e-12


def test_transition_records_clipped_command():
    cfg = nav_config()
    state = make_state((0.0, 0.0), obstacles=[(1.5, 0.0)])
    wild = env.step(state, np.array([5.0, -3.0]), unit_phi(), cfg)
    np.testing.assert_array_equal(wild.action, np.array([1.0, -1.0]))
    tame = env.step(state, np.array([1.0, -1.0]), unit_phi(), cfg)
    np.testing.assert_array_equal(
        wild.next_state.as_vector(), tame.next_state.as_vector()
    )


def test_step_is_deterministic():
    cfg = nav_config()
    rng = np.random.default_rng(11)
    phi = env.sample_phi(rng, cfg.param_intervals)
    state = env.reset(cfg, phi, rng)
    action = np.array([0.4, 0.9])
    a = env.step(state, action, phi, cfg)
    b = env.step(state, action, phi, cfg)
    np.testing.assert_array_equal(a.next_state.as_vector(), b.next_state.as_vector())
    assert a.reward == b.reward and a.cost == b.cost


def test_step_rejects_bad_input():
    cfg = nav_config()
    state = make_state((0.0, 0.0))
    with pytest.raises(ValueError):
        env.step(state, np.zeros(3), unit_phi(), cfg)
    with pytest.raises(ValueError):
        env.step(state, np.array([np.nan, 0.0]), unit_phi(), cfg)
    done = env.EnvState(
        position=np.zeros(2),
        velocity=np.zeros(2),
        goal_rel=np.zeros(2),
        sensor=np.zeros(0),
        step_index=cfg.horizon,
    )
    with pytest.raises(env.EpisodeOverrunError):
        env.step(done, np.zeros(2), unit_phi(), cfg)


# ---------------------------------------------------------------------------
# Hidden-parameter sampling
# ---------------------------------------------------------------------------


def test_sample_phi_degenerate_interval_is_exact():
    phi = env.sample_phi(np.random.default_rng(0), ((1.0, 1.0),))
    assert phi.gravity_scale == 1.0
    assert phi.mass_scale == 1.0
    assert phi.damping_scale == 1.0
    assert phi.friction_scale == 1.0


def test_sample_phi_stays_inside_interval():
    rng = np.random.default_rng(1)
    for _ in range(100):
        phi = env.sample_phi(rng, ((0.3, 1.7),))
        assert np.all((phi.as_array() >= 0.3) & (phi.as_array() <= 1.7))


def test_sample_phi_two_intervals_are_equally_likely():
    rng = np.random.default_rng(2)
    intervals = ((0.15, 0.3), (1.7, 2.5))
    values = np.concatenate(
        [env.sample_phi(rng, intervals).as_array() for _ in range(10_000)]
    )
    fraction_low = float(np.mean(values < 1.0))
    assert abs(fraction_low - 0.5) < 0.02


def test_sample_phi_requires_intervals():
    with pytest.raises(ValueError):
        env.sample_phi(np.random.default_rng(0), ())


# ---------------------------------------------------------------------------
# Cost indicator and safety margin
# ---------------------------------------------------------------------------


def test_cost_frozen_examples():
    cfg = nav_config()  # safe_distance = 0.25
    assert env.cost_fn(make_state((0.0, 0.0), obstacles=[(1.0, 0.0)]), cfg) == 0
    assert env.cost_fn(make_state((0.0, 0.0), obstacles=[(0.2, 0.0)]), cfg) == 1
    assert env.cost_fn(make_state((0.0, 0.0), obstacles=[]), cfg) == 0


def test_margin_frozen_examples():
    cfg = nav_config()
    wall = np.array([[1.0, 0.0]])
    assert env.nu(np.array([0.0, 0.0]), wall, cfg) == 0.75
    assert env.nu(np.array([1.0, 0.0]), wall, cfg) == -0.25
    ring = circle_config()  # region_radius 1.5, region_margin 0.05
    assert env.nu(np.array([0.0, 0.0]), np.zeros((0, 2)), ring) == pytest.approx(1.45)
    assert env.nu(np.array([1.6, 0.0]), np.zeros((0, 2)), ring) < 0.0


def test_margin_sign_matches_cost_indicator():
    rng = np.random.default_rng(3)
    nav = nav_config()
    ring = circle_config()
    for _ in range(10_000):
        p = rng.uniform(-2.0, 2.0, size=2)
        obstacles = rng.uniform(-2.0, 2.0, size=(int(rng.integers(1, 5)), 2))
        state = make_state(p, obstacles=obstacles)
        assert (env.nu(p, obstacles, nav) <= 0.0) == bool(env.cost_fn(state, nav))
        ring_state = env.EnvState(
            position=p, velocity=np.zeros(2), goal_rel=np.zeros(2), sensor=np.zeros(0)
        )
        assert (env.nu(p, obstacles, ring) <= 0.0) == bool(env.cost_fn(ring_state, ring))


@settings(max_examples=200, deadline=None)
@given(
    px=st.floats(-2, 2), py=st.floats(-2, 2),
    dx=st.floats(-0.5, 0.5), dy=st.floats(-0.5, 0.5),
    seed=st.integers(0, 2**32 - 1),
    task=st.sampled_from(["navigation", "circle"]),
)
def test_margin_is_lipschitz_in_position(px, py, dx, dy, seed, task):
    cfg = env.EnvConfig(task=task)
    obstacles = np.random.default_rng(seed).uniform(-2, 2, size=(3, 2))
    p = np.array([px, py])
    d = np.array([dx, dy])
    gap = abs(env.nu(p + d, obstacles, cfg) - env.nu(p, obstacles, cfg))
    assert gap <= np.linalg.norm(d) + 1e-9


def test_nu_batch_matches_scalar():
    cfg = nav_config()
    rng = np.random.default_rng(4)
    P = rng.uniform(-2, 2, size=(64, 2))
    obstacles = rng.uniform(-2, 2, size=(4, 2))
    batch = env.nu_batch(P, obstacles, cfg)
    for i in range(P.shape[0]):
        assert batch[i] == env.nu(P[i], obstacles, cfg)
    with pytest.raises(ValueError):
        env.nu_batch(P.reshape(-1), obstacles, cfg)


def test_nu_batch_no_obstacles_is_unbounded():
    cfg = nav_config()
    out = env.nu_batch(np.zeros((3, 2)), np.zeros((0, 2)), cfg)
    assert np.all(np.isinf(out))


# ---------------------------------------------------------------------------
# Reset / layout
# ---------------------------------------------------------------------------


def test_reset_layout_has_clearance():
    cfg = nav_config()
    rng = np.random.default_rng(5)
    for _ in range(50):
        state = env.reset(cfg, env.sample_phi(rng, cfg.param_intervals), rng)
        assert state.step_index == 0
        np.testing.assert_array_equal(state.velocity, np.zeros(2))
        points = np.vstack(
            [state.position[None, :], env.world_goal(state)[None, :], env.world_obstacles(state)]
        )
        diffs = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
        off_diag = diffs[~np.eye(len(points), dtype=bool)]
        assert off_diag.min() > 2.0 * cfg.safe_distance
        assert env.cost_fn(state, cfg) == 0
        dists = np.linalg.norm(state.sensor.reshape(-1, 2), axis=1)
        assert np.all(np.diff(dists) >= 0)  # sensor sorted nearest-first


def test_reset_zero_obstacles():
    cfg = nav_config(obstacle_count=0)
    state = env.reset(cfg, unit_phi(), np.random.default_rng(6))
    assert state.sensor.size == 0
    assert state.as_vector().shape == (6,)
    assert env.cost_fn(state, cfg) == 0


def test_reset_is_reproducible():
    cfg = nav_config()
    a = env.reset(cfg, unit_phi(), np.random.default_rng(42))
    b = env.reset(cfg, unit_phi(), np.random.default_rng(42))
    np.testing.assert_array_equal(a.as_vector(), b.as_vector())
    c = env.reset(cfg, unit_phi(), np.random.default_rng(43))
    assert not np.array_equal(a.as_vector(), c.as_vector())


def test_reset_raises_when_arena_is_too_crowded():
    cfg = nav_config(obstacle_count=500)
    with pytest.raises(env.PlacementError):
        env.reset(cfg, unit_phi(), np.random.default_rng(8))


def test_circle_reset_starts_safe():
    cfg = circle_config(obstacle_count=2)
    rng = np.random.default_rng(9)
    for _ in range(20):
        state = env.reset(cfg, unit_phi(), rng)
        assert env.cost_fn(state, cfg) == 0
        assert np.linalg.norm(state.position) < cfg.region_radius - cfg.region_margin


def test_sensor_stays_sorted_along_trajectory():
    cfg = nav_config()
    rng = np.random.default_rng(10)
    phi = env.sample_phi(rng, cfg.param_intervals)
    state = env.reset(cfg, phi, rng)
    for _ in range(100):
        state = env.step(state, rng.uniform(-1, 1, size=2), phi, cfg).next_state
        dists = np.linalg.norm(state.sensor.reshape(-1, 2), axis=1)
        assert np.all(np.diff(dists) >= 0)


def test_world_obstacles_are_static_along_trajectory():
    cfg = nav_config()
    rng = np.random.default_rng(12)
    phi = env.sample_phi(rng, cfg.param_intervals)
    state = env.reset(cfg, phi, rng)
    initial = np.sort(env.world_obstacles(state), axis=0)
    for _ in range(50):
        state = env.step(state, rng.uniform(-1, 1, size=2), phi, cfg).next_state
        np.testing.assert_allclose(
            np.sort(env.world_obstacles(state), axis=0), initial, atol=1e-12
        )


# ---------------------------------------------------------------------------
# Rewards
# ---------------------------------------------------------------------------


def test_navigation_goal_bonus():
    cfg = nav_config()
    near = make_state((0.0, 0.0), goal=(0.25, 0.0), obstacles=[(1.5, 1.5)])
    far = make_state((0.0, 0.0), goal=(1.0, 0.0), obstacles=[(1.5, 1.5)])
    # zero action from rest holds position: progress term is 0 either way,
    # and only the near state sits inside the goal radius
    assert env.step(near, np.zeros(2), unit_phi(), cfg).reward == 1.0
    assert env.step(far, np.zeros(2), unit_phi(), cfg).reward == 0.0


def test_navigation_reward_is_progress():
    cfg = nav_config()
    state = make_state((0.0, 0.0), velocity=(1.0, 0.0), goal=(2.0, 0.0), obstacles=[(0, 1.9)])
    tr = env.step(state, np.zeros(2), unit_phi(), cfg)
    dist_prev = np.linalg.norm(state.goal_rel)
    dist_next = np.linalg.norm(env.world_goal(tr.next_state) - tr.next_state.position)
    assert tr.reward == pytest.approx(dist_prev - dist_next)
    assert tr.reward > 0


def test_circle_reward_prefers_counterclockwise_motion():
    cfg = circle_config()
    fwd = env.EnvState(np.array([1.0, 0.0]), np.array([0.0, 0.5]), np.zeros(2), np.zeros(0))
    back = env.EnvState(np.array([1.0, 0.0]), np.array([0.0, -0.5]), np.zeros(2), np.zeros(0))
    r_fwd = env.step(fwd, np.zeros(2), unit_phi(), cfg).reward
    r_back = env.step(back, np.zeros(2), unit_phi(), cfg).reward
    assert r_fwd > r_back


# ---------------------------------------------------------------------------
# State vectors and replay
# ---------------------------------------------------------------------------


def test_state_vector_round_trip():
    cfg = nav_config()
    rng = np.random.default_rng(13)
    state = env.reset(cfg, unit_phi(), rng)
    again = env.EnvState.from_vector(state.as_vector(), step_index=state.step_index)
    np.testing.assert_array_equal(again.as_vector(), state.as_vector())
    with pytest.raises(ValueError):
        env.EnvState.from_vector(np.zeros(5))
    with pytest.raises(ValueError):
        env.EnvState.from_vector(np.zeros(7))


def test_layout_replay_is_bit_identical():
    cfg = nav_config()
    rng = np.random.default_rng(14)
    phi = env.sample_phi(rng, cfg.param_intervals)
    start = env.reset(cfg, phi, rng)
    record = env.serialize_layout(start, phi, seed=14)

    phi2, start2 = env.restore_layout(record, cfg)
    assert phi2 == phi
    np.testing.assert_array_equal(start2.as_vector(), start.as_vector())

    actions = np.random.default_rng(15).uniform(-1, 1, size=(40, 2))
    s1, s2 = start, start2
    for a in actions:
        t1 = env.step(s1, a, phi, cfg)
        t2 = env.step(s2, a, phi2, cfg)
        assert t1.reward == t2.reward and t1.cost == t2.cost
        np.testing.assert_array_equal(t1.next_state.as_vector(), t2.next_state.as_vector())
        s1, s2 = t1.next_state, t2.next_state


def test_layout_record_is_plain_json():
    cfg = nav_config()
    rng = np.random.default_rng(16)
    state = env.reset(cfg, unit_phi(), rng)
    data = json.loads(env.serialize_layout(state, unit_phi(), seed=16))
    assert data["seed"] == 16
    assert len(data["obstacles"]) == cfg.obstacle_count
    with pytest.raises(ValueError):
        env.restore_layout(json.dumps({**data, "version": 99}), cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        env.EnvConfig(task="maze")
    with pytest.raises(ValueError):
        env.EnvConfig(obstacle_count=-1)
    with pytest.raises(ValueError):
        env.EnvConfig(param_intervals=((0.0, 1.0),))
    with pytest.raises(ValueError):
        env.EnvConfig(param_intervals=((1.5, 0.5),))
    assert nav_config(obstacle_count=3).state_dim == 12
