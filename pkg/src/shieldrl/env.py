"""Desk-scale 2D point-mass environments with hidden dynamics parameters.

A single rigid point is driven by a force action in ``[-1, 1]^2``.  Four
hidden multipliers (gravity, mass, damping, friction) rescale the base
dynamics per episode, so the transition function is only identified up to
the episode's parameter draw.  Integration is semi-implicit Euler:

    v' = v + dt * ( a / (m * mass_scale)
                    - c * damping_scale * v
                    - mu * friction_scale * g * gravity_scale * tanh(v / v_eps) )
    p' = p + dt * v'

with the speed ``|v'|`` capped at ``v_max`` before the position update, so a
single step can never move the point farther than ``dt * v_max``.

Two tasks share the dynamics:

  * ``navigation``: reach a goal while keeping clear of ``M`` static disc
    obstacles.  A step is unsafe (cost 1) when the point is within
    ``safe_distance`` of any obstacle center.
  * ``circle``: track a circular path at speed while staying inside a safe
    disc; a step is unsafe when the point leaves the disc shrunk by
    ``region_margin``.

The safety margin ``nu`` is a 1-Lipschitz function of the point's position
with ``nu > 0`` exactly when the state is cost-free, which is what the
runtime shield verifies against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class PlacementError(RuntimeError):
    """Rejection sampling could not place the layout with enough clearance."""


class EpisodeOverrunError(RuntimeError):
    """``step`` was called on a state already at the episode horizon."""


@dataclass(frozen=True)
class HiddenParams:
    """Per-episode multipliers applied to the base dynamics constants."""

    gravity_scale: float
    mass_scale: float
    damping_scale: float
    friction_scale: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.gravity_scale, self.mass_scale, self.damping_scale, self.friction_scale]
        )

    @classmethod
    def from_array(cls, arr) -> "HiddenParams":
        g, m, c, f = (float(v) for v in arr)
        return cls(g, m, c, f)


# Number of hidden multipliers (a planar point mass has no rotational
# inertia, so no inertia multiplier is exposed).
PARAM_DIM = 4


@dataclass
class EnvConfig:
    task: str = "navigation"
    obstacle_count: int = 4
    safe_distance: float = 0.25
    dt: float = 0.1
    horizon: int = 400
    mass: float = 1.0
    damping: float = 1.0
    friction: float = 0.05
    gravity: float = 9.81
    v_max: float = 2.0
    v_eps: float = 0.05
    arena_half: float = 2.0
    goal_radius: float = 0.3
    region_radius: float = 1.5
    region_margin: float = 0.05
    circle_radius: float = 1.0
    param_intervals: tuple[tuple[float, float], ...] = ((0.3, 1.7),)

    def __post_init__(self) -> None:
        if self.task not in ("navigation", "circle"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.obstacle_count < 0:
            raise ValueError("obstacle_count must be >= 0")
        if self.dt <= 0 or self.horizon <= 0 or self.v_max <= 0 or self.v_eps <= 0:
            raise ValueError("dt, horizon, v_max and v_eps must be positive")
        if self.safe_distance <= 0 or self.arena_half <= 0:
            raise ValueError("safe_distance and arena_half must be positive")
        self.param_intervals = tuple(
            (float(lo), float(hi)) for lo, hi in self.param_intervals
        )
        for lo, hi in self.param_intervals:
            if not (0 < lo <= hi):
                raise ValueError(f"bad parameter interval [{lo}, {hi}]")

    @property
    def state_dim(self) -> int:
        return 6 + 2 * self.obstacle_count

    @property
    def action_dim(self) -> int:
        return 2

    def max_feature_step(self) -> float:
        """Largest possible per-step change of the point's position."""
        return self.dt * self.v_max


@dataclass
class EnvState:
    """Observable state: everything the agent (and the shield) can see.

    ``sensor`` lists the obstacle offsets ``X_i - position`` sorted by
    ascending distance, flattened to ``2 * obstacle_count`` entries, and
    ``goal_rel`` is ``goal - position`` (zero for the circle task).  World
    coordinates of obstacles and goal are recoverable from the state, which
    keeps ``step`` a pure function.
    """

    position: np.ndarray
    velocity: np.ndarray
    goal_rel: np.ndarray
    sensor: np.ndarray
    step_index: int = 0

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.goal_rel, self.sensor])

    @classmethod
    def from_vector(cls, vec: np.ndarray, step_index: int = 0) -> "EnvState":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.ndim != 1 or vec.shape[0] < 6 or (vec.shape[0] - 6) % 2 != 0:
            raise ValueError(f"state vector must have length 6 + 2M, got shape {vec.shape}")
        return cls(
            position=vec[0:2].copy(),
            velocity=vec[2:4].copy(),
            goal_rel=vec[4:6].copy(),
            sensor=vec[6:].copy(),
            step_index=step_index,
        )


POSITION_SLICE = slice(0, 2)


@dataclass
class Transition:
    state: EnvState
    action: np.ndarray
    next_state: EnvState
    reward: float
    cost: int


def sample_phi(
    rng: np.random.Generator, intervals: tuple[tuple[float, float], ...]
) -> HiddenParams:
    """Draw one multiplier per dynamics constant.

    When several intervals are given, each draw first picks an interval
    uniformly at random and then samples uniformly inside it (degenerate
    intervals like ``[1, 1]`` yield the value exactly).
    """
    if not intervals:
        raise ValueError("at least one sampling interval is required")
    values = []
    for _ in range(PARAM_DIM):
        lo, hi = intervals[int(rng.integers(len(intervals)))]
        values.append(float(rng.uniform(lo, hi)))
    return HiddenParams.from_array(values)


def _sorted_sensor(obstacles: np.ndarray, position: np.ndarray) -> np.ndarray:
    if obstacles.size == 0:
        return np.zeros(0)
    rel = obstacles - position
    order = np.argsort(np.linalg.norm(rel, axis=1), kind="stable")
    return rel[order].reshape(-1)


def reset(config: EnvConfig, phi: HiddenParams, rng: np.random.Generator) -> EnvState:
    """Place a fresh layout and return the initial state (zero velocity).

    Placements are rejection-sampled with pairwise clearance greater than
    ``2 * safe_distance`` so the start is always cost-free; more than 1000
    failed attempts raise ``PlacementError``.
    """
    del phi  # layout geometry does not depend on the dynamics draw
    pad = config.safe_distance
    lo, hi = -config.arena_half + pad, config.arena_half - pad
    clearance = 2.0 * config.safe_distance
    attempts = 0

    def place(existing: list[np.ndarray]) -> np.ndarray:
        nonlocal attempts
        while True:
            attempts += 1
            if attempts > 1000:
                raise PlacementError(
                    f"could not place layout after 1000 attempts (task={config.task})"
                )
            candidate = rng.uniform(lo, hi, size=2)
            if config.task == "circle":
                # keep the start strictly inside the shrunken safe disc
                if existing == [] and np.linalg.norm(candidate) > (
                    config.region_radius - config.region_margin - config.safe_distance
                ):
                    continue
            if all(np.linalg.norm(candidate - p) > clearance for p in existing):
                return candidate

    agent = place([])
    placed = [agent]
    if config.task == "navigation":
        goal = place(placed)
        placed.append(goal)
        goal_rel = goal - agent
    else:
        goal_rel = np.zeros(2)
    obstacles = []
    for _ in range(config.obstacle_count):
        obstacles.append(place(placed))
        placed.append(obstacles[-1])
    obstacle_arr = np.array(obstacles).reshape(-1, 2) if obstacles else np.zeros((0, 2))
    return EnvState(
        position=agent,
        velocity=np.zeros(2),
        goal_rel=goal_rel,
        sensor=_sorted_sensor(obstacle_arr, agent),
        step_index=0,
    )


def world_obstacles(state: EnvState) -> np.ndarray:
    """Absolute obstacle positions ``(M, 2)`` recovered from the sensor."""
    if state.sensor.size == 0:
        return np.zeros((0, 2))
    return state.position + state.sensor.reshape(-1, 2)


def world_goal(state: EnvState) -> np.ndarray:
    return state.position + state.goal_rel


def step(
    state: EnvState, action: np.ndarray, phi: HiddenParams, config: EnvConfig
) -> Transition:
    """Advance one control step.  Deterministic given (state, action, phi)."""
    if state.step_index >= config.horizon:
        raise EpisodeOverrunError(
            f"episode is over (step_index={state.step_index}, horizon={config.horizon})"
        )
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (2,):
        raise ValueError(f"action must have shape (2,), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"action must be finite, got {a}")
    a_clipped = np.clip(a, -1.0, 1.0)

    v = state.velocity
    accel = (
        a_clipped / (config.mass * phi.mass_scale)
        - config.damping * phi.damping_scale * v
        - config.friction
        * phi.friction_scale
        * config.gravity
        * phi.gravity_scale
        * np.tanh(v / config.v_eps)
    )
    v_next = v + config.dt * accel
    speed = float(np.linalg.norm(v_next))
    if speed > config.v_max:
        v_next = v_next * (config.v_max / speed)
    p_next = state.position + config.dt * v_next

    obstacles = world_obstacles(state)
    sensor_next = _sorted_sensor(obstacles, p_next)

    if config.task == "navigation":
        goal = world_goal(state)
        goal_rel_next = goal - p_next
        dist_prev = float(np.linalg.norm(state.goal_rel))
        dist_next = float(np.linalg.norm(goal_rel_next))
        reward = dist_prev - dist_next
        if dist_next < config.goal_radius:
            reward += 1.0
    else:
        goal_rel_next = np.zeros(2)
        radius = float(np.linalg.norm(p_next))
        if radius > 0.0:
            tangent = np.array([-p_next[1], p_next[0]]) / radius
            tangential_speed = float(v_next @ tangent)
        else:
            tangential_speed = 0.0
        reward = tangential_speed - abs(radius - config.circle_radius)

    next_state = EnvState(
        position=p_next,
        velocity=v_next,
        goal_rel=goal_rel_next,
        sensor=sensor_next,
        step_index=state.step_index + 1,
    )
    return Transition(
        state, a_clipped, next_state, float(reward), cost_fn(next_state, config)
    )


def cost_fn(state: EnvState, config: EnvConfig) -> int:
    """Unsafe-step indicator, computable from the observable state alone."""
    if config.task == "navigation":
        if state.sensor.size == 0:
            return 0
        dists = np.linalg.norm(state.sensor.reshape(-1, 2), axis=1)
        return int(dists.min() <= config.safe_distance)
    return int(
        np.linalg.norm(state.position) >= config.region_radius - config.region_margin
    )


def nu(features: np.ndarray, env_features: np.ndarray, config: EnvConfig) -> float:
    """Signed safety margin of a position; positive exactly when cost-free.

    ``features`` is the point's position and ``env_features`` the absolute
    obstacle positions ``(M, 2)`` (ignored by the circle task).  The margin
    is 1-Lipschitz in the position, which bounds how much a position error
    of size ``r`` can change it.
    """
    return float(nu_batch(np.asarray(features, dtype=np.float64)[None, :], env_features, config)[0])


def nu_batch(positions: np.ndarray, env_features: np.ndarray, config: EnvConfig) -> np.ndarray:
    """Vectorized ``nu`` over ``(B, 2)`` candidate positions."""
    P = np.asarray(positions, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != 2:
        raise ValueError(f"positions must have shape (B, 2), got {P.shape}")
    if config.task == "navigation":
        obstacles = np.asarray(env_features, dtype=np.float64).reshape(-1, 2)
        if obstacles.shape[0] == 0:
            return np.full(P.shape[0], np.inf)
        dists = np.linalg.norm(P[:, None, :] - obstacles[None, :, :], axis=2)
        return dists.min(axis=1) - config.safe_distance
    return (config.region_radius - np.linalg.norm(P, axis=1)) - config.region_margin


# ---------------------------------------------------------------------------
# Layout serialization (replay support)
# ---------------------------------------------------------------------------

LAYOUT_VERSION = 1


def serialize_layout(state: EnvState, phi: HiddenParams, seed: int | None = None) -> str:
    """One-line JSON record of a layout, sufficient to replay the episode."""
    record = {
        "version": LAYOUT_VERSION,
        "seed": seed,
        "phi": list(phi.as_array()),
        "start": list(state.position),
        "goal": list(world_goal(state)),
        "obstacles": [list(row) for row in world_obstacles(state)],
    }
    return json.dumps(record, sort_keys=True)


def restore_layout(record: str, config: EnvConfig) -> tuple[HiddenParams, EnvState]:
    data = json.loads(record)
    if data.get("version") != LAYOUT_VERSION:
        raise ValueError(f"unsupported layout version {data.get('version')!r}")
    phi = HiddenParams.from_array(data["phi"])
    start = np.asarray(data["start"], dtype=np.float64)
    obstacles = np.asarray(data["obstacles"], dtype=np.float64).reshape(-1, 2)
    if config.task == "navigation":
        goal_rel = np.asarray(data["goal"], dtype=np.float64) - start
    else:
        goal_rel = np.zeros(2)
    state = EnvState(
        position=start,
        velocity=np.zeros(2),
        goal_rel=goal_rel,
        sensor=_sorted_sensor(obstacles, start),
        step_index=0,
    )
    return phi, state
