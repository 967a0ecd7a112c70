"""Baseline controllers and the capture-percentage evaluation harness."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from . import agent as rn
from .geometry import SceneBounds
from .observation import FrameHistory, observe
from .sim import Action, EnvConfig, EnvState, Sensor, init_episode, step

_EDGE_EPS = 1e-12


class Controller(Protocol):
    """Chooses one action per sensor. `reset` is called at episode start."""

    def reset(self, state: EnvState, rng: np.random.Generator) -> None: ...

    def act(self, state: EnvState) -> list[Action]: ...


def random_policy(include_noop: bool, rng: np.random.Generator) -> Action:
    if include_noop:
        return Action(int(rng.integers(5)))
    return Action(1 + int(rng.integers(4)))


class RandomController:
    def __init__(self, include_noop: bool = True):
        self.include_noop = include_noop
        self.rng = np.random.default_rng(0)

    def reset(self, state, rng):
        self.rng = rng

    def act(self, state):
        return [random_policy(self.include_noop, self.rng) for _ in state.sensors]


class Phase(enum.Enum):
    MOVING_UP = "up"
    MOVING_DOWN = "down"


@dataclass(frozen=True)
class LawnmowerState:
    phase: Phase = Phase.MOVING_UP
    side_step_pending: bool = False
    direction: int = 1                  # +1 side-steps right, -1 left
    target_x: float | None = None       # initial column to travel to first


def lawnmower_policy(state: LawnmowerState, sensor: Sensor, scene: SceneBounds,
                     time_scale: float = 1.0) -> tuple[Action, LawnmowerState]:
    """One step of the column sweep.

    Moves up or down a column; once a move reaches the top or bottom edge,
    the next step is a single side-step and the vertical phase flips. At
    the right (left) boundary the side-step direction reverses.
    """
    view = sensor.view
    d = sensor.speed * time_scale

    if state.target_x is not None:
        offset = state.target_x - view.cx
        at_wall = (offset > 0 and view.right >= scene.width - _EDGE_EPS) or (
            offset < 0 and view.left <= _EDGE_EPS)
        if abs(offset) > d / 2 and not at_wall:
            return (Action.RIGHT if offset > 0 else Action.LEFT), state
        state = replace(state, target_x=None)

    if state.side_step_pending:
        direction = state.direction
        if direction > 0 and view.right >= scene.width - _EDGE_EPS:
            direction = -1
        elif direction < 0 and view.left <= _EDGE_EPS:
            direction = 1
        phase = Phase.MOVING_DOWN if state.phase is Phase.MOVING_UP else Phase.MOVING_UP
        action = Action.RIGHT if direction > 0 else Action.LEFT
        return action, replace(state, side_step_pending=False, phase=phase, direction=direction)

    if state.phase is Phase.MOVING_UP:
        reaches_edge = view.top + d >= scene.height - _EDGE_EPS
        return Action.UP, replace(state, side_step_pending=reaches_edge)
    reaches_edge = view.bottom - d <= _EDGE_EPS
    return Action.DOWN, replace(state, side_step_pending=reaches_edge)


class LawnmowerController:
    """Independent sweeps per sensor; with several sensors each first
    travels to its own column, spread evenly across the scene width."""

    def __init__(self):
        self.states: list[LawnmowerState] = []

    def reset(self, state, rng):
        n = len(state.sensors)
        if n == 1:
            self.states = [LawnmowerState()]
            return
        width = state.scene.width
        self.states = [
            LawnmowerState(direction=1 if i % 2 == 0 else -1, target_x=(i + 0.5) * width / n)
            for i in range(n)
        ]

    def act(self, state):
        actions = []
        for i, sensor in enumerate(state.sensors):
            a, self.states[i] = lawnmower_policy(self.states[i], sensor, state.scene,
                                                 state.params.time_scale)
            actions.append(a)
        return actions


class AgentController:
    """Every sensor is driven by the same network, each with itself marked
    as the controlled sensor."""

    def __init__(self, params, mode: str = "deterministic", aggregation: str = "sum"):
        self.params = params
        self.mode = mode
        self.aggregation = aggregation
        self.histories: dict[int, FrameHistory] = {}
        self.rng = np.random.default_rng(0)
        self.last_outputs: dict[int, rn.PolicyOutput] = {}

    def reset(self, state, rng):
        self.rng = rng
        self.histories = {s.id: FrameHistory() for s in state.sensors}

    def act(self, state):
        actions = []
        for s in state.sensors:
            rel = observe(self.histories.setdefault(s.id, FrameHistory()), state, s.id)
            out = rn.forward(self.params, rel, aggregation=self.aggregation)
            self.last_outputs[s.id] = out
            actions.append(rn.select_action(out, self.mode, self.rng))
        return actions


def make_baseline(name: str):
    if name in ("random", "random-no-noop"):
        return RandomController(include_noop=False)
    if name in ("random-noop", "random-with-noop"):
        return RandomController(include_noop=True)
    if name in ("lawnmower", "lawn-mower"):
        return LawnmowerController()
    if name == "noop":
        return NoopController()
    raise ValueError(f"unknown baseline {name!r}; choose random, random-noop, lawnmower or noop")


class NoopController:
    def reset(self, state, rng):
        pass

    def act(self, state):
        return [Action.NOOP] * len(state.sensors)


@dataclass
class EvalReport:
    episodes: int
    capture_pct: float
    per_episode: list = field(default_factory=list)     # [(objects_total, objects_captured)]
    stderr: float = 0.0
    mean_episode_pct: float = 0.0

    @classmethod
    def from_counts(cls, counts: Sequence[tuple[int, int]]) -> EvalReport:
        counts = [(int(t), int(c)) for t, c in counts]
        total = sum(t for t, _ in counts)
        captured = sum(c for _, c in counts)
        pct = 100.0 * captured / total if total else 0.0
        per = np.array([100.0 * c / t if t else 0.0 for t, c in counts])
        stderr = float(per.std(ddof=1) / math.sqrt(len(per))) if len(per) > 1 else 0.0
        return cls(len(counts), pct, counts, stderr, float(per.mean()) if len(per) else 0.0)

    def to_json(self) -> str:
        d = asdict(self)
        d["per_episode"] = [list(p) for p in self.per_episode]
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str) -> EvalReport:
        d = json.loads(text)
        d["per_episode"] = [tuple(p) for p in d["per_episode"]]
        return cls(**d)

    def summary(self) -> str:
        return (f"episodes={self.episodes} capture_pct={self.capture_pct:.2f} "
                f"stderr={self.stderr:.2f} mean_episode_pct={self.mean_episode_pct:.2f}")


def episode_seeds(seed: int, i: int) -> tuple[int, np.random.Generator]:
    """Environment seed and controller rng for episode i of a seeded run.

    Object motion draws come only from the environment seed, so every
    policy evaluated with the same seed faces identical scenes.
    """
    ss = np.random.SeedSequence([seed, i])
    env_seed, ctl_seed = ss.generate_state(2)
    return int(env_seed), np.random.default_rng(int(ctl_seed))


def run_episode(controller: Controller, state: EnvState, rng: np.random.Generator) -> tuple[int, int]:
    controller.reset(state, rng)
    while not state.done:
        state, _ = step(state, controller.act(state))
    return state.total_objects, len(state.captured_ids)


def evaluate(policy: Controller, env_config: EnvConfig, episodes: int = 100, seed: int = 0) -> EvalReport:
    """Pool capture counts over `episodes` seeded episodes."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    counts = []
    for i in range(episodes):
        env_seed, rng = episode_seeds(seed, i)
        counts.append(run_episode(policy, init_episode(env_config, env_seed), rng))
    return EvalReport.from_counts(counts)
