"""Abstract coverage simulator.

Objects are boxes that wander around a rectangular scene, switching
between moving and standing still, turning and occasionally reversing.
Sensors are boxes that pan one step per action. An object is captured
the first time its box lies fully inside some sensor view; that earns
+1 for the sensor and marks the object for the rest of the episode.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .geometry import Box, SceneBounds, clamp_center_to_scene


class ConfigError(ValueError):
    """Invalid configuration value; the message names the offending key."""


class LifecycleError(RuntimeError):
    pass


class UsageError(ValueError):
    pass


class Action(enum.IntEnum):
    NOOP = 0
    UP = 1
    DOWN = 2
    LEFT = 3
    RIGHT = 4


N_ACTIONS = len(Action)

# +y is up in world coordinates
ACTION_DELTAS = {
    Action.NOOP: (0.0, 0.0),
    Action.UP: (0.0, 1.0),
    Action.DOWN: (0.0, -1.0),
    Action.LEFT: (-1.0, 0.0),
    Action.RIGHT: (1.0, 0.0),
}


Range = tuple


@dataclass
class EnvConfig:
    """Ranges the per-episode parameters are drawn from.

    Pairs are inclusive ``(low, high)`` ranges; integer pairs are drawn
    discrete-uniform, float pairs uniform.
    """

    scene_width: float = 1.0
    scene_height: float = 1.0
    n_sensors: Range = (1, 5)
    n_objects: Range = (1, 50)
    object_size: Range = (0.02, 0.08)
    sensor_size: Range = (0.10, 0.25)
    sensor_speed: Range = (0.01, 0.05)
    object_speed: Range = (0.0, 0.02)
    time_scale: Range = (0.5, 2.0)
    horizon: Range = (500, 1500)
    p_moving: float = 0.5
    p_toggle: float = 0.02
    turn_sigma: float = 0.2
    p_reverse: float = 0.005
    spawn_rate: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                setattr(self, f.name, tuple(v))
        self.validate()

    def validate(self) -> None:
        def bad(key, msg):
            raise ConfigError(f"env.{key}: {msg}")

        for key in ("scene_width", "scene_height"):
            v = getattr(self, key)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                bad(key, f"must be a positive number, got {v!r}")
        for key in ("n_sensors", "n_objects", "horizon"):
            lo, hi = self._pair(key)
            if int(lo) != lo or int(hi) != hi:
                bad(key, f"must be integers, got {(lo, hi)}")
            if lo > hi:
                bad(key, f"low {lo} exceeds high {hi}")
        lo, hi = self.n_sensors
        if lo < 1 or hi > 5:
            bad("n_sensors", f"must lie within [1, 5], got {(lo, hi)}")
        lo, hi = self.n_objects
        if lo < 1 or hi > 50:
            bad("n_objects", f"must lie within [1, 50], got {(lo, hi)}")
        if self.horizon[0] < 1:
            bad("horizon", "must be positive")
        for key in ("object_size", "sensor_size", "sensor_speed", "object_speed", "time_scale"):
            lo, hi = self._pair(key)
            if not (math.isfinite(lo) and math.isfinite(hi)):
                bad(key, "must be finite")
            if lo > hi:
                bad(key, f"low {lo} exceeds high {hi}")
            if key == "object_speed":
                if lo < 0:
                    bad(key, "must be non-negative")
            elif lo <= 0:
                bad(key, "must be positive")
        if self.sensor_size[1] > min(self.scene_width, self.scene_height):
            bad("sensor_size", "sensor views must fit inside the scene")
        for key in ("p_moving", "p_toggle", "p_reverse"):
            v = getattr(self, key)
            if not 0.0 <= v <= 1.0:
                bad(key, f"must be a probability, got {v!r}")
        if self.turn_sigma < 0:
            bad("turn_sigma", "must be non-negative")
        if not (math.isfinite(self.spawn_rate) and self.spawn_rate >= 0):
            bad("spawn_rate", "must be non-negative")

    def _pair(self, key):
        v = getattr(self, key)
        if not (isinstance(v, tuple) and len(v) == 2):
            raise ConfigError(f"env.{key}: expected a [low, high] pair, got {v!r}")
        return v


@dataclass(frozen=True)
class EpisodeParams:
    scene: SceneBounds
    n_sensors: int
    n_objects: int
    time_scale: float
    horizon: int
    spawn_rate: float


@dataclass
class SimObject:
    id: int
    box: Box
    heading: float
    speed: float
    moving: bool
    captured: bool = False


@dataclass
class Sensor:
    id: int
    view: Box
    speed: float


@dataclass
class StepResult:
    rewards: list[int]
    newly_captured: list[int]
    done: bool


@dataclass(eq=False)
class EnvState:
    params: EpisodeParams
    objects: list[SimObject]
    sensors: list[Sensor]
    rng: np.random.Generator
    config: EnvConfig
    t: int = 0
    next_id: int = 0
    captured_ids: set = field(default_factory=set)

    @property
    def done(self) -> bool:
        return self.t >= self.params.horizon

    @property
    def scene(self) -> SceneBounds:
        return self.params.scene

    @property
    def total_objects(self) -> int:
        """Distinct object ids that have existed so far this episode."""
        return self.next_id

    def __eq__(self, other):
        if not isinstance(other, EnvState):
            return NotImplemented
        return (
            self.params == other.params
            and self.objects == other.objects
            and self.sensors == other.sensors
            and self.t == other.t
            and self.next_id == other.next_id
            and self.captured_ids == other.captured_ids
            and self.rng.bit_generator.state == other.rng.bit_generator.state
        )


def _uniform(rng, pair):
    lo, hi = pair
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def _integers(rng, pair):
    lo, hi = pair
    return int(rng.integers(lo, hi + 1))


def _random_box_inside(rng, scene: SceneBounds, w: float, h: float) -> Box:
    cx = rng.uniform(w / 2, scene.width - w / 2)
    cy = rng.uniform(h / 2, scene.height - h / 2)
    return clamp_center_to_scene(Box(float(cx), float(cy), w, h), scene)


def init_episode(config: EnvConfig, seed: int) -> EnvState:
    """Draw a fresh randomized episode. Same (config, seed) -> same state."""
    config.validate()
    rng = np.random.default_rng(seed)
    scene = SceneBounds(config.scene_width, config.scene_height)
    n_sensors = _integers(rng, config.n_sensors)
    n_objects = _integers(rng, config.n_objects)
    horizon = _integers(rng, config.horizon)
    time_scale = _uniform(rng, config.time_scale)
    params = EpisodeParams(scene, n_sensors, n_objects, time_scale, horizon, config.spawn_rate)

    sensors = []
    for i in range(n_sensors):
        w = _uniform(rng, config.sensor_size)
        h = _uniform(rng, config.sensor_size)
        speed = _uniform(rng, config.sensor_speed)
        sensors.append(Sensor(i, _random_box_inside(rng, scene, w, h), speed))

    state = EnvState(params, [], sensors, rng, config)
    for _ in range(n_objects):
        w = _uniform(rng, config.object_size)
        h = _uniform(rng, config.object_size)
        box = _random_box_inside(rng, scene, min(w, scene.width), min(h, scene.height))
        heading = float(rng.uniform(0.0, 2 * math.pi))
        speed = _uniform(rng, config.object_speed)
        moving = bool(rng.random() < config.p_moving)
        state.objects.append(SimObject(state.next_id, box, heading, speed, moving))
        state.next_id += 1
    return state


def object_dynamics(o: SimObject, rng: np.random.Generator, time_scale: float,
                    config: EnvConfig) -> SimObject:
    """Advance one object by one step.

    Draws, in order: toggle, turn, reverse. Stationary objects consume
    only the toggle draw.
    """
    moving = o.moving
    if rng.random() < config.p_toggle:
        moving = not moving
    if not moving:
        return o if moving == o.moving else replace(o, moving=False)
    heading = o.heading + float(rng.normal(0.0, config.turn_sigma))
    if rng.random() < config.p_reverse:
        heading += math.pi
    heading = math.fmod(heading, 2 * math.pi)
    d = o.speed * time_scale
    box = o.box.moved(d * math.cos(heading), d * math.sin(heading))
    return replace(o, box=box, heading=heading, moving=True)


def move_sensors(state: EnvState, actions: Sequence[int]) -> None:
    ts = state.params.time_scale
    for sensor, a in zip(state.sensors, actions):
        dx, dy = ACTION_DELTAS[Action(a)]
        if dx == 0.0 and dy == 0.0:
            continue
        step = sensor.speed * ts
        sensor.view = clamp_center_to_scene(sensor.view.moved(dx * step, dy * step), state.scene)


def _spawn(state: EnvState) -> None:
    cfg, scene, rng = state.config, state.scene, state.rng
    count = int(rng.poisson(state.params.spawn_rate)) if state.params.spawn_rate > 0 else 0
    for _ in range(count):
        w = min(_uniform(rng, cfg.object_size), scene.width)
        h = min(_uniform(rng, cfg.object_size), scene.height)
        edge = int(rng.integers(4))
        jitter = float(rng.uniform(-math.pi / 4, math.pi / 4))
        if edge == 0:  # left
            cx, cy, inward = 0.0, rng.uniform(h / 2, scene.height - h / 2), 0.0
        elif edge == 1:  # right
            cx, cy, inward = scene.width, rng.uniform(h / 2, scene.height - h / 2), math.pi
        elif edge == 2:  # bottom
            cx, cy, inward = rng.uniform(w / 2, scene.width - w / 2), 0.0, math.pi / 2
        else:  # top
            cx, cy, inward = rng.uniform(w / 2, scene.width - w / 2), scene.height, -math.pi / 2
        speed = _uniform(rng, cfg.object_speed)
        obj = SimObject(state.next_id, Box(float(cx), float(cy), w, h), inward + jitter, speed, True)
        state.objects.append(obj)
        state.next_id += 1


def capture(state: EnvState) -> tuple[list[int], list[int]]:
    """Mark uncaptured objects fully inside a view.

    Returns per-sensor rewards and the ids captured now. The lowest
    sensor id containing an object gets its reward.
    """
    rewards = [0] * len(state.sensors)
    pending = [o for o in state.objects if not o.captured]
    if not pending or not state.sensors:
        return rewards, []
    ob = np.array([(o.box.left, o.box.right, o.box.bottom, o.box.top) for o in pending])
    sv = np.array([(s.view.left, s.view.right, s.view.bottom, s.view.top) for s in state.sensors])
    inside = (
        (ob[:, None, 0] >= sv[None, :, 0])
        & (ob[:, None, 1] <= sv[None, :, 1])
        & (ob[:, None, 2] >= sv[None, :, 2])
        & (ob[:, None, 3] <= sv[None, :, 3])
    )
    newly = []
    for k in np.flatnonzero(inside.any(axis=1)):
        o = pending[k]
        o.captured = True
        state.captured_ids.add(o.id)
        newly.append(o.id)
        rewards[int(np.argmax(inside[k]))] += 1
    return rewards, newly


def step(state: EnvState, actions: Sequence[int]) -> tuple[EnvState, StepResult]:
    """Advance the episode by one step, mutating and returning `state`."""
    if len(actions) != len(state.sensors):
        raise UsageError(f"expected {len(state.sensors)} actions, got {len(actions)}")
    if state.done:
        raise LifecycleError("episode is over; call init_episode for a new one")

    move_sensors(state, actions)

    ts = state.params.time_scale
    scene = state.scene
    survivors = []
    for o in state.objects:
        o = object_dynamics(o, state.rng, ts, state.config)
        if scene.contains_point(o.box.cx, o.box.cy):
            survivors.append(o)
    state.objects = survivors
    _spawn(state)

    rewards, newly = capture(state)
    state.t += 1
    return state, StepResult(rewards, newly, state.done)
