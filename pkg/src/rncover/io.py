"""Configuration files, checkpoints, and detection-trace replay."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import yaml

from . import agent as rn
from . import autodiff as ad
from .baselines import AgentController, Controller, EvalReport, make_baseline
from .geometry import Box, GeometryError, SceneBounds
from .sim import (ConfigError, EnvConfig, EnvState, EpisodeParams, Sensor, SimObject, capture,
                  init_episode, move_sensors, object_dynamics)
from .trainer import SearchSpec, TrainerConfig


class VersionError(ValueError):
    """Checkpoint does not match the network architecture."""


class TraceFormatError(ValueError):
    pass


# -- configuration -------------------------------------------------------------

@dataclass
class EvalSettings:
    episodes: int = 100
    action_mode: str = "deterministic"

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("eval.episodes: must be >= 1")
        if self.action_mode not in ("deterministic", "stochastic"):
            raise ConfigError("eval.action_mode: must be 'deterministic' or 'stochastic'")


@dataclass
class RenderSettings:
    scale: float = 200.0
    output_dir: str = "frames"

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError("render.scale: must be positive")


@dataclass
class Config:
    env: EnvConfig = field(default_factory=EnvConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    search: SearchSpec = field(default_factory=SearchSpec)
    eval: EvalSettings = field(default_factory=EvalSettings)
    render: RenderSettings = field(default_factory=RenderSettings)
    seed: int = 0


SECTIONS = {
    "env": EnvConfig,
    "trainer": TrainerConfig,
    "search": SearchSpec,
    "eval": EvalSettings,
    "render": RenderSettings,
}


def _coerce(section: str, key: str, default, value):
    name = f"{section}.{key}"
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name}: expected a list, got {value!r}")
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{name}: expected a string, got {value!r}")
    return value


def config_from_dict(tree: dict | None) -> Config:
    tree = dict(tree or {})
    unknown = set(tree) - set(SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown configuration key {sorted(unknown)[0]!r}")
    built = {}
    for section, cls in SECTIONS.items():
        values = tree.get(section) or {}
        if not isinstance(values, dict):
            raise ConfigError(f"{section}: expected a mapping")
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown configuration key '{section}.{key}'")
            default = _field_default(known[key])
            kwargs[key] = _coerce(section, key, default, value)
        built[section] = cls(**kwargs)
    seed = tree.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"seed: expected an integer, got {seed!r}")
    return Config(seed=seed, **built)


def _field_default(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()


def config_to_dict(cfg: Config) -> dict:
    def plain(v):
        return list(v) if isinstance(v, tuple) else v

    out = {}
    for section in SECTIONS:
        obj = getattr(cfg, section)
        out[section] = {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    out["seed"] = cfg.seed
    return out


def serialize_config(cfg: Config) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=None)


def parse_config_text(text: str, overrides: Iterable[str] = ()) -> Config:
    try:
        tree = yaml.safe_load(text) if text.strip() else {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "unknown line"
        raise ConfigError(f"config syntax error at {where}: {getattr(exc, 'problem', exc)}") from exc
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError("config must be a mapping at the top level")
    for item in overrides:
        apply_override(tree, item)
    return config_from_dict(tree)


def parse_config(path, overrides: Iterable[str] = ()) -> Config:
    """Read a YAML config; absent keys take their defaults.

    `overrides` are ``dotted.key=value`` strings applied on top of the
    file (values parsed as YAML scalars), so command-line flags win over
    the file, which wins over defaults.
    """
    if path is None or str(path) == "default":
        text = ""
    else:
        text = Path(path).read_text()
    return parse_config_text(text, overrides)


def apply_override(tree: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-mapping")
    node[parts[-1]] = yaml.safe_load(raw)


def config_reference() -> str:
    """Every configuration key with its default value."""
    lines = ["# configuration reference (all keys optional)"]
    tree = config_to_dict(Config())
    for section, values in tree.items():
        if not isinstance(values, dict):
            lines.append(f"{section}: {values}")
            continue
        lines.append(f"{section}:")
        for key, value in values.items():
            lines.append(f"  {key}: {json.dumps(value)}")
    return "\n".join(lines) + "\n"


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(path, params) -> None:
    ad.save_tensors(path, params, ad.CHECKPOINT_HEADER)


def load_checkpoint(path) -> ad.ParameterStore:
    try:
        tensors = ad.load_tensors(path, ad.CHECKPOINT_HEADER)
    except ad.FormatError as exc:
        raise VersionError(f"{path}: {exc}") from exc
    params = ad.ParameterStore(tensors)
    try:
        rn.check_params(params)
    except ad.ShapeError as exc:
        raise VersionError(f"{path}: {exc}") from exc
    return params


def save_optimizer(path, opt: ad.RMSProp) -> None:
    ad.save_tensors(path, opt.g2, ad.OPTIMIZER_HEADER)


def load_optimizer(path, params, lr: float, rho: float = 0.99, eps: float = 0.1) -> ad.RMSProp:
    g2 = ad.load_tensors(path, ad.OPTIMIZER_HEADER)
    opt = ad.RMSProp(params, lr, rho, eps)
    if {k: v.shape for k, v in g2.items()} != {k: v.shape for k, v in opt.g2.items()}:
        raise VersionError(f"{path}: optimizer state does not match the parameters")
    opt.g2 = g2
    return opt


# -- detection traces ------------------------------------------------------------

@dataclass(frozen=True)
class Detection:
    track_id: int
    cx: float
    cy: float
    w: float
    h: float


@dataclass(frozen=True)
class TraceFrame:
    t: int
    detections: tuple = ()


@dataclass(frozen=True)
class TraceEpisode:
    scene: SceneBounds
    frames: tuple = ()

    def track_ids(self) -> set[int]:
        return {d.track_id for f in self.frames for d in f.detections}


def write_trace(ep: TraceEpisode, path) -> None:
    """One JSON header line, then one line per detection (or a bare
    ``{"t": ...}`` line for a frame without detections)."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"scene_w": ep.scene.width, "scene_h": ep.scene.height}) + "\n")
        for frame in ep.frames:
            if not frame.detections:
                fh.write(json.dumps({"t": frame.t}) + "\n")
            for d in frame.detections:
                fh.write(json.dumps({"t": frame.t, "track_id": d.track_id, "cx": d.cx,
                                     "cy": d.cy, "w": d.w, "h": d.h}) + "\n")


def load_trace(path) -> TraceEpisode:
    lines = Path(path).read_text().splitlines()
    scene = None
    frames: list[TraceFrame] = []
    current_t = None
    current: list[Detection] = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"{path}:{lineno}: malformed record: {exc.msg}") from exc
        if not isinstance(rec, dict):
            raise TraceFormatError(f"{path}:{lineno}: expected a JSON object")
        if scene is None:
            try:
                scene = SceneBounds(float(rec["scene_w"]), float(rec["scene_h"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise TraceFormatError(f"{path}:{lineno}: bad header: {exc}") from exc
            continue
        if "t" not in rec or isinstance(rec["t"], bool) or not isinstance(rec["t"], int):
            raise TraceFormatError(f"{path}:{lineno}: missing integer 't'")
        t = rec["t"]
        if current_t is not None and t < current_t:
            raise TraceFormatError(f"{path}:{lineno}: t={t} after t={current_t}; times must not decrease")
        if t != current_t:
            if current_t is not None:
                frames.append(TraceFrame(current_t, tuple(current)))
            current_t, current = t, []
        if "track_id" not in rec:
            if len(rec) != 1:
                raise TraceFormatError(f"{path}:{lineno}: detection without track_id")
            continue
        try:
            det = Detection(int(rec["track_id"]), float(rec["cx"]), float(rec["cy"]),
                            float(rec["w"]), float(rec["h"]))
            Box(det.cx, det.cy, det.w, det.h)
        except (KeyError, TypeError, ValueError, GeometryError) as exc:
            raise TraceFormatError(f"{path}:{lineno}: bad detection: {exc}") from exc
        current.append(det)
    if scene is None:
        raise TraceFormatError(f"{path}: missing header line")
    if current_t is not None:
        frames.append(TraceFrame(current_t, tuple(current)))
    return TraceEpisode(scene, tuple(frames))


def synthetic_trace(env_config: EnvConfig, seed: int, dropout: float = 0.0,
                    steps: int | None = None) -> TraceEpisode:
    """Record simulated object motion as a detection trace.

    Each detection is independently dropped with probability `dropout`,
    mimicking a detector that misses objects from time to time.
    """
    state = init_episode(env_config, seed)
    drop_rng = np.random.default_rng([seed, 1])
    n = steps if steps is not None else state.params.horizon
    frames = []
    for t in range(n):
        dets = tuple(
            Detection(o.id, o.box.cx, o.box.cy, o.box.w, o.box.h)
            for o in state.objects if not (dropout > 0 and drop_rng.random() < dropout)
        )
        frames.append(TraceFrame(t, dets))
        state.objects = [
            o for o in (object_dynamics(o, state.rng, state.params.time_scale, env_config)
                        for o in state.objects)
            if state.scene.contains_point(o.box.cx, o.box.cy)
        ]
    return TraceEpisode(state.scene, tuple(frames))


def _resolve_policy(policy, action_mode: str, aggregation: str) -> Controller:
    if isinstance(policy, (str, Path)):
        p = str(policy)
        try:
            return make_baseline(p)
        except ValueError:
            return AgentController(load_checkpoint(p), action_mode, aggregation)
    if isinstance(policy, dict):
        rn.check_params(policy)
        return AgentController(policy, action_mode, aggregation)
    return policy


@dataclass
class ReplayResult:
    report: EvalReport
    frames: list = field(default_factory=list)
    states: list = field(default_factory=list)


def replay(trace: TraceEpisode, policy, n_sensors: int = 1, action_mode: str = "deterministic",
           env_config: EnvConfig | None = None, seed: int = 0, aggregation: str = "sum",
           render_scale: float | None = None) -> ReplayResult:
    """Drive simulated sensors over a recorded trace.

    Objects are taken verbatim from the trace; sensors are sized, placed
    and moved as in the simulator, with sizes and speeds read as fractions
    of the trace's scene. Capture rules are the simulator's. The object
    universe is the set of distinct track ids.
    """
    from .analysis import render_frame

    cfg = env_config or EnvConfig()
    if not 1 <= n_sensors <= 5:
        raise ConfigError("n_sensors must lie in [1, 5]")
    controller = _resolve_policy(policy, action_mode, aggregation)
    rng = np.random.default_rng(seed)
    scene = trace.scene
    unit = min(scene.width, scene.height)
    sensors = []
    for i in range(n_sensors):
        w = float(rng.uniform(*cfg.sensor_size)) * scene.width
        h = float(rng.uniform(*cfg.sensor_size)) * scene.height
        speed = float(rng.uniform(*cfg.sensor_speed)) * unit
        cx = float(rng.uniform(w / 2, scene.width - w / 2))
        cy = float(rng.uniform(h / 2, scene.height - h / 2))
        sensors.append(Sensor(i, Box(cx, cy, w, h), speed))
    frames = trace.frames
    params = EpisodeParams(scene, n_sensors, len(frames[0].detections) if frames else 0, 1.0,
                           max(len(frames), 1), 0.0)
    state = EnvState(params, [], sensors, np.random.default_rng([seed, 7]), cfg)

    def load_frame(frame):
        state.objects = [
            SimObject(d.track_id, Box(d.cx, d.cy, d.w, d.h), 0.0, 0.0, False,
                      d.track_id in state.captured_ids)
            for d in frame.detections
        ]

    out = ReplayResult(EvalReport.from_counts([]))
    if frames:
        load_frame(frames[0])
        controller.reset(state, np.random.default_rng([seed, 11]))
        for frame in frames:
            actions = controller.act(state)
            move_sensors(state, actions)
            load_frame(frame)
            capture(state)
            state.t += 1
            if render_scale is not None:
                out.frames.append(render_frame(state, 0, None, render_scale))
    universe = trace.track_ids()
    out.report = EvalReport.from_counts([(len(universe), len(state.captured_ids & universe))])
    return out
