"""Relational-network actor-critic.

Every relation row goes through the shared relation MLP (60 -> 128 ->
256 -> 256, ReLU), the rows are summed into one 256-vector, the sum goes
through a 256-unit ReLU layer with 2% dropout, and two linear heads read
off five action logits and a scalar state value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, ShapeError, Tape
from .observation import RELATION_WIDTH, RelationSet
from .sim import N_ACTIONS, Action

RELATION_LAYERS = (128, 256, 256)
POST_SUM_WIDTH = 256
DROPOUT_RATE = 0.02

LAYER_NAMES = ("g0", "g1", "g2", "f0", "policy", "value")


def architecture() -> dict[str, tuple[int, int]]:
    """(out, in) for every layer, in forward order."""
    widths = (RELATION_WIDTH,) + RELATION_LAYERS
    shapes = {f"g{k}": (widths[k + 1], widths[k]) for k in range(len(RELATION_LAYERS))}
    shapes["f0"] = (POST_SUM_WIDTH, RELATION_LAYERS[-1])
    shapes["policy"] = (N_ACTIONS, POST_SUM_WIDTH)
    shapes["value"] = (1, POST_SUM_WIDTH)
    return shapes


def param_shapes() -> dict[str, tuple]:
    out = {}
    for layer, (n_out, n_in) in architecture().items():
        out[f"{layer}.weight"] = (n_out, n_in)
        out[f"{layer}.bias"] = (n_out,)
    return out


def init_params(seed: int) -> ParameterStore:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    rng = np.random.default_rng(seed)
    params = ParameterStore()
    for layer, (n_out, n_in) in architecture().items():
        bound = 1.0 / np.sqrt(n_in)
        params[f"{layer}.weight"] = rng.uniform(-bound, bound, size=(n_out, n_in))
        params[f"{layer}.bias"] = rng.uniform(-bound, bound, size=(n_out,))
    return params


def check_params(params) -> None:
    expected = param_shapes()
    got = {k: tuple(np.shape(v)) for k, v in params.items()}
    if got != expected:
        raise ShapeError(f"parameters do not match the architecture: {sorted(set(got) ^ set(expected)) or 'shape mismatch'}")


@dataclass
class PolicyOutput:
    probs: np.ndarray                   # (5,)
    logits: np.ndarray                  # (5,)
    value: float
    relation_activations: np.ndarray    # (n, 256)


@dataclass
class NetworkOutputs:
    """Tape handles of a (possibly batched) forward pass."""

    logits: ad.Tensor                   # (B, 5)
    values: ad.Tensor                   # (B,)
    relations: ad.Tensor                # (N, 256) after the relation MLP
    pooled: ad.Tensor                   # (B, 256)


def network(params, rows: np.ndarray, segments: np.ndarray, n_segments: int, *,
            train_mode: bool = False, rng: np.random.Generator | None = None,
            tape: Tape | None = None, gates: ad.Tensor | None = None,
            aggregation: str = "sum") -> NetworkOutputs:
    """Forward pass over stacked relation rows of `n_segments` states.

    ``segments[k]`` names the state row k belongs to. Optional per-row
    `gates` multiply the relation activations before pooling.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != RELATION_WIDTH:
        raise ShapeError(f"relation rows must have width {RELATION_WIDTH}, got {rows.shape}")

    def p(name):
        return tape.param(name, params[name]) if tape is not None else ad.Tensor(params[name])

    h = ad.Tensor(rows)
    for k in range(len(RELATION_LAYERS)):
        h = ad.relu(ad.affine(p(f"g{k}.weight"), p(f"g{k}.bias"), h, tape), tape)
    relations = h
    if gates is not None:
        h = ad.scale_rows(h, gates, tape)
    pooled = ad.segment_sum(h, segments, n_segments, tape)
    if aggregation == "mean":
        counts = np.bincount(np.asarray(segments, dtype=np.intp), minlength=n_segments)
        inv = 1.0 / np.maximum(counts, 1)
        pooled = ad.scale_rows(pooled, ad.Tensor(inv), tape)
    elif aggregation != "sum":
        raise ValueError(f"unknown aggregation {aggregation!r}")
    z = ad.relu(ad.affine(p("f0.weight"), p("f0.bias"), pooled, tape), tape)
    z = ad.dropout(z, DROPOUT_RATE, train_mode, rng, tape)
    logits = ad.affine(p("policy.weight"), p("policy.bias"), z, tape)
    value = ad.column(ad.affine(p("value.weight"), p("value.bias"), z, tape), 0, tape)
    return NetworkOutputs(logits, value, relations, pooled)


def stack_relation_sets(sets: Sequence[RelationSet]) -> tuple[np.ndarray, np.ndarray]:
    rows = [s.rows for s in sets]
    segments = [np.full(len(s), i, dtype=np.intp) for i, s in enumerate(sets)]
    if not rows:
        return np.zeros((0, RELATION_WIDTH)), np.zeros(0, dtype=np.intp)
    return np.concatenate(rows, axis=0), np.concatenate(segments)


def forward(params, rel: RelationSet, train_mode: bool = False,
            rng: np.random.Generator | None = None, tape: Tape | None = None,
            aggregation: str = "sum") -> PolicyOutput:
    rows = rel.rows if isinstance(rel, RelationSet) else np.asarray(rel)
    out = network(params, rows, np.zeros(len(rows), dtype=np.intp), 1,
                  train_mode=train_mode, rng=rng, tape=tape, aggregation=aggregation)
    probs = ad.softmax(out.logits).data[0]
    return PolicyOutput(probs, out.logits.data[0].copy(), float(out.values.data[0]),
                        out.relations.data)


def select_action(out: PolicyOutput, mode: str, rng: np.random.Generator | None = None) -> Action:
    """'deterministic' takes the argmax (lowest index on ties); 'stochastic' samples."""
    if mode == "deterministic":
        return Action(int(np.argmax(out.probs)))
    if mode == "stochastic":
        if rng is None:
            raise ValueError("stochastic action selection needs an rng")
        u = rng.random()
        k = int(np.searchsorted(np.cumsum(out.probs), u, side="right"))
        return Action(min(k, N_ACTIONS - 1))
    raise ValueError(f"unknown action mode {mode!r}")
