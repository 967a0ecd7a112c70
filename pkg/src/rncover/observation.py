"""Relational observation encoding.

Every visible entity (all sensors, every uncaptured object) becomes a
5-value frame: normalized box plus a type tag. The last four frames are
stacked into a 20-value vector. Relations are ordered entity pairs with
at least one sensor, each row being ``o_i ++ o_j ++ c`` where ``c`` is
the controlled sensor's own 20-value vector.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .geometry import normalize_box
from .sim import EnvState, UsageError

N_FRAMES = 4
FRAME_WIDTH = 5
VECTOR_WIDTH = N_FRAMES * FRAME_WIDTH
RELATION_WIDTH = 3 * VECTOR_WIDTH

TAG_OBJECT = 0.0
TAG_SENSOR = 0.5
TAG_CONTROLLED = 1.0

# entity keys: ("s", sensor_id) or ("o", object_id); sensors sort first
EntityKey = tuple


@dataclass
class FrameHistory:
    """The last four frames, each mapping entity key -> 5-value frame."""

    frames: deque = field(default_factory=lambda: deque(maxlen=N_FRAMES))
    controlled: int | None = None

    def __len__(self):
        return len(self.frames)

    @property
    def newest(self) -> dict:
        return self.frames[-1]


@dataclass
class RelationSet:
    rows: np.ndarray                  # (n, 60)
    pair_index: list                  # [(key_i, key_j), ...] aligned with rows
    condition: np.ndarray             # (20,)
    controlled: int = 0

    def __len__(self):
        return self.rows.shape[0]


def frame_of(state: EnvState, controlled_sensor: int) -> dict:
    scene = state.scene
    frame = {}
    for s in state.sensors:
        tag = TAG_CONTROLLED if s.id == controlled_sensor else TAG_SENSOR
        frame[("s", s.id)] = np.array((*normalize_box(s.view, scene).as_tuple(), tag))
    for o in state.objects:
        if not o.captured:
            frame[("o", o.id)] = np.array((*normalize_box(o.box, scene).as_tuple(), TAG_OBJECT))
    return frame


def push_history(h: FrameHistory, state: EnvState, controlled_sensor: int) -> FrameHistory:
    """Append the current frame, evicting the oldest beyond four.

    Entities seen for the first time get their current frame copied into
    every older slot. Updates `h` in place and returns it.
    """
    if not any(s.id == controlled_sensor for s in state.sensors):
        raise UsageError(f"no sensor with id {controlled_sensor}")
    frame = frame_of(state, controlled_sensor)
    h.controlled = controlled_sensor
    if not h.frames:
        for _ in range(N_FRAMES):
            h.frames.append(dict(frame))
        return h
    h.frames.append(frame)
    for key, vec in frame.items():
        for old in h.frames:
            if key not in old:
                old[key] = vec
    return h


def entity_vectors(h: FrameHistory) -> tuple[list, np.ndarray]:
    """Keys of the newest frame (sensors first) and their stacked vectors."""
    keys = sorted(h.newest, key=lambda k: (k[0] != "s", k[1]))
    if not keys:
        return keys, np.zeros((0, VECTOR_WIDTH))
    vecs = np.array([[h.frames[k][key] for k in range(len(h.frames))] for key in keys])
    return keys, vecs.reshape(len(keys), -1)


def encode(h: FrameHistory, controlled_sensor: int) -> RelationSet:
    if not h.frames:
        raise UsageError("cannot encode an empty history")
    ckey = ("s", controlled_sensor)
    if ckey not in h.newest:
        raise UsageError(f"controlled sensor {controlled_sensor} missing from history")
    keys, vecs = entity_vectors(h)
    n = len(keys)
    is_sensor = np.array([k[0] == "s" for k in keys], dtype=bool)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    keep = (ii != jj) & (is_sensor[ii] | is_sensor[jj])
    ii, jj = ii[keep], jj[keep]
    cond = vecs[keys.index(ckey)]
    rows = np.empty((ii.size, RELATION_WIDTH))
    rows[:, :VECTOR_WIDTH] = vecs[ii]
    rows[:, VECTOR_WIDTH:2 * VECTOR_WIDTH] = vecs[jj]
    rows[:, 2 * VECTOR_WIDTH:] = cond
    pairs = [(keys[i], keys[j]) for i, j in zip(ii.tolist(), jj.tolist())]
    return RelationSet(rows, pairs, cond.copy(), controlled_sensor)


def observe(h: FrameHistory, state: EnvState, controlled_sensor: int) -> RelationSet:
    push_history(h, state, controlled_sensor)
    return encode(h, controlled_sensor)
