"""Central finite-difference checks of every reverse-mode gradient.

The full-network check uses its own plain-numpy forward pass as the
oracle, never the tape. Coordinates whose +/- perturbation flips a ReLU
(a non-differentiable point) are skipped and counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import agent as rn
from . import autodiff as ad
from .observation import RELATION_WIDTH, RelationSet
from .trainer import RolloutBuffer, Transition, compute_targets, loss_and_grads

STEP = 1e-5
# gradients smaller than this (times the loss magnitude, when above 1) are
# compared in absolute terms; central-difference roundoff grows with |loss|
REL_FLOOR = 1e-6


def rel_error(analytic: float, numeric: float, floor: float = REL_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


@dataclass
class GradcheckResult:
    max_rel_error: float = 0.0
    checked: int = 0
    skipped: int = 0
    worst: str = ""
    per_case: dict = field(default_factory=dict)

    def add(self, case: str, analytic: float, numeric: float, floor: float = REL_FLOOR):
        e = rel_error(analytic, numeric, floor)
        self.checked += 1
        self.per_case[case] = max(self.per_case.get(case, 0.0), e)
        if e > self.max_rel_error:
            self.max_rel_error = e
            self.worst = f"{case}: analytic={analytic:.6e} numeric={numeric:.6e}"

    def merge(self, other: GradcheckResult):
        for case, e in other.per_case.items():
            self.per_case[case] = max(self.per_case.get(case, 0.0), e)
        if other.max_rel_error > self.max_rel_error:
            self.max_rel_error, self.worst = other.max_rel_error, other.worst
        self.checked += other.checked
        self.skipped += other.skipped


def _fd(f: Callable[[], float], arr: np.ndarray, idx) -> float:
    old = arr[idx]
    arr[idx] = old + STEP
    fp = f()
    arr[idx] = old - STEP
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2 * STEP)


# -- single ops ------------------------------------------------------------------

def _op_cases(rng: np.random.Generator):
    """(name, inputs, fn(tensors, tape) -> Tensor)."""
    n, d, k = 4, 6, 3
    x = rng.normal(size=(n, d))
    W = rng.normal(size=(k, d))
    b = rng.normal(size=k)
    # keep ReLU inputs away from zero so +/- STEP never crosses the kink
    xr = rng.normal(size=(n, d))
    xr = np.where(np.abs(xr) < 1e-2, 0.5, xr)
    seg = np.array([0, 2, 0, 1])
    idx = rng.integers(0, d, size=n)
    gates = rng.normal(size=n)
    mask_seed = int(rng.integers(2**31))
    return [
        ("affine", [W, b, x], lambda t, tp: ad.affine(t[0], t[1], t[2], tp)),
        ("relu", [xr], lambda t, tp: ad.relu(t[0], tp)),
        ("dropout", [x], lambda t, tp: ad.dropout(t[0], 0.3, True, np.random.default_rng(mask_seed), tp)),
        ("softmax", [x], lambda t, tp: ad.softmax(t[0], tp)),
        ("log_softmax", [x], lambda t, tp: ad.log_softmax(t[0], tp)),
        ("scale_rows", [x, gates], lambda t, tp: ad.scale_rows(t[0], t[1], tp)),
        ("segment_sum", [x], lambda t, tp: ad.segment_sum(t[0], seg, 3, tp)),
        ("pick", [x], lambda t, tp: ad.pick(t[0], idx, tp)),
        ("column", [x], lambda t, tp: ad.column(t[0], 2, tp)),
        ("add", [x, xr], lambda t, tp: ad.add(t[0], t[1], tp)),
        ("sub", [x, xr], lambda t, tp: ad.sub(t[0], t[1], tp)),
        ("mul", [x, xr], lambda t, tp: ad.mul(t[0], t[1], tp)),
        ("scale", [x], lambda t, tp: ad.scale(t[0], -1.7, tp)),
        ("square", [x], lambda t, tp: ad.square(t[0], tp)),
        ("sum_last", [x], lambda t, tp: ad.sum_last(t[0], tp)),
        ("total", [x], lambda t, tp: ad.total(t[0], tp)),
    ]


def check_ops(seed: int) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    res = GradcheckResult()
    for name, inputs, fn in _op_cases(rng):
        inputs = [np.array(a, dtype=np.float64) for a in inputs]
        probe_shape = fn([ad.Tensor(a) for a in inputs], None).shape
        probe = rng.normal(size=probe_shape)

        def scalar():
            return float(np.sum(probe * fn([ad.Tensor(a) for a in inputs], None).data))

        tape = ad.Tape()
        leaves = [tape.param(f"in{i}", a) for i, a in enumerate(inputs)]
        out = fn(leaves, tape)
        loss = ad.total(ad.mul(out, ad.Tensor(probe), tape), tape)
        grads = ad.backward(tape, loss)
        for i, a in enumerate(inputs):
            for idx in np.ndindex(a.shape):
                res.add(name, float(grads[f"in{i}"][idx]), _fd(scalar, a, idx))
    return res


# -- full network + actor-critic loss ----------------------------------------------

def random_buffer(rng: np.random.Generator, gamma: float = 0.95, max_len: int = 5,
                  max_rows: int = 8) -> RolloutBuffer:
    buf = RolloutBuffer()
    for _ in range(int(rng.integers(1, max_len + 1))):
        n = int(rng.integers(0, max_rows + 1))
        rel = RelationSet(rng.uniform(-1, 1, size=(n, RELATION_WIDTH)), [], np.zeros(20))
        buf.transitions.append(Transition(rel, int(rng.integers(5)), float(rng.integers(0, 2)),
                                          float(rng.normal())))
    buf.bootstrap = float(rng.normal())
    return compute_targets(buf, gamma)


def reference_loss(params, buf: RolloutBuffer, beta: float, vlw: float,
                   aggregation: str = "sum") -> tuple[float, np.ndarray]:
    """Negated actor-critic objective in plain numpy, plus the ReLU sign pattern."""
    signs = []
    pooled = []
    for tr in buf.transitions:
        h = tr.relations.rows
        for k in range(3):
            z = h @ params[f"g{k}.weight"].T + params[f"g{k}.bias"]
            signs.append((z > 0).ravel())
            h = np.maximum(z, 0.0)
        s = h.sum(axis=0) if len(h) else np.zeros(params["g2.bias"].shape)
        if aggregation == "mean" and len(h):
            s = s / len(h)
        pooled.append(s)
    pooled = np.array(pooled)
    z = pooled @ params["f0.weight"].T + params["f0.bias"]
    signs.append((z > 0).ravel())
    z = np.maximum(z, 0.0)
    logits = z @ params["policy.weight"].T + params["policy.bias"]
    values = (z @ params["value.weight"].T + params["value.bias"])[:, 0]
    m = logits.max(axis=1, keepdims=True)
    logp = logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    p = np.exp(logp)
    actions = np.array([t.action for t in buf.transitions])
    pg = np.sum(logp[np.arange(len(actions)), actions] * buf.advantages)
    ent = -np.sum(p * logp)
    vloss = np.sum((buf.returns - values) ** 2)
    return float(-(pg + beta * ent - vlw * vloss)), np.concatenate(signs)


def check_network(seed: int, coords_per_tensor: int = 6, aggregation: str = "sum") -> GradcheckResult:
    rng = np.random.default_rng(seed)
    params = rn.init_params(seed)
    buf = random_buffer(rng)
    beta, vlw = float(rng.uniform(0, 0.1)), 0.5
    grads, _ = loss_and_grads(buf, params, beta, vlw, rng=None, train_mode=False,
                              aggregation=aggregation)
    res = GradcheckResult()
    base, _ = reference_loss(params, buf, beta, vlw, aggregation)
    floor = REL_FLOOR * max(1.0, abs(base))
    for name in sorted(params):
        arr = params[name]
        for idx in ad.iter_coordinates(arr.shape, coords_per_tensor, rng):
            old = arr[idx]
            arr[idx] = old + STEP
            fp, sp = reference_loss(params, buf, beta, vlw, aggregation)
            arr[idx] = old - STEP
            fm, sm = reference_loss(params, buf, beta, vlw, aggregation)
            arr[idx] = old
            if not np.array_equal(sp, sm):
                res.skipped += 1
                continue
            res.add(f"network:{name}", float(grads[name][idx]), (fp - fm) / (2 * STEP), floor)
    return res


def run_suite(seeds: Iterable[int], coords_per_tensor: int = 6) -> GradcheckResult:
    total = GradcheckResult()
    for seed in seeds:
        total.merge(check_ops(seed))
        total.merge(check_network(seed, coords_per_tensor))
    return total
