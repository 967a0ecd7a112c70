"""Relation attribution and frame rendering.

A relation's contribution is the derivative of the KL divergence
between the uniform action distribution and the policy with respect to
a scalar gate multiplying that relation's activation, taken with every
gate at one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import agent as rn
from . import autodiff as ad
from .observation import RelationSet
from .sim import N_ACTIONS, EnvState, UsageError

GATE_NAME = "__gates"


@dataclass
class ContributionReport:
    pairs: list                 # entity key pairs aligned with `values`
    values: np.ndarray          # one signed contribution per relation row
    action: int
    probs: np.ndarray
    kl: float

    def sidecar(self, t: int | None = None) -> dict:
        return {
            "t": t,
            "pairs": [[list(a), list(b)] for a, b in self.pairs],
            "values": [float(v) for v in self.values],
            "action": int(self.action),
            "probs": [float(p) for p in self.probs],
        }


def _kl_from_logp(logp: ad.Tensor, reverse: bool, tape) -> ad.Tensor:
    if not reverse:
        # KL(U || pi) = -log K - (1/K) sum_k log pi_k
        return ad.scale(ad.total(logp, tape), -1.0 / N_ACTIONS, tape)
    probs = ad.softmax(logp, tape)
    return ad.total(ad.mul(probs, logp, tape), tape)


def kl_to_uniform(probs: np.ndarray, reverse: bool = False) -> float:
    p = np.asarray(probs, dtype=np.float64)
    if reverse:
        nz = p > 0
        return float((p[nz] * np.log(p[nz] * N_ACTIONS)).sum())
    return float(-math.log(N_ACTIONS) - np.log(p).mean())


def gated_kl(params, rel: RelationSet, gates: np.ndarray, reverse: bool = False,
             aggregation: str = "sum") -> float:
    """KL divergence of the policy when relation activations are scaled by `gates`."""
    out = rn.network(params, rel.rows, np.zeros(len(rel), dtype=np.intp), 1,
                     gates=ad.Tensor(np.asarray(gates, dtype=np.float64)), aggregation=aggregation)
    return kl_to_uniform(ad.softmax(out.logits).data[0], reverse)


def relation_contributions(params, rel: RelationSet, reverse: bool = False,
                           aggregation: str = "sum") -> ContributionReport:
    if len(rel) == 0:
        raise UsageError("cannot attribute an empty relation set")
    tape = ad.Tape()
    gates = tape.param(GATE_NAME, np.ones(len(rel)))
    out = rn.network(params, rel.rows, np.zeros(len(rel), dtype=np.intp), 1,
                     tape=tape, gates=gates, aggregation=aggregation)
    logp = ad.log_softmax(out.logits, tape)
    kl = _kl_from_logp(logp, reverse, tape)
    grads = ad.backward(tape, kl)
    probs = np.exp(logp.data[0])
    const = math.log(N_ACTIONS) if reverse else -math.log(N_ACTIONS)
    return ContributionReport(list(rel.pair_index), grads[GATE_NAME].copy(),
                              int(np.argmax(probs)), probs, float(kl.data) + const)


# -- rendering ----------------------------------------------------------------

WHITE = (255, 255, 255)
BLACK = (0, 0, 0)
GREEN = (0, 170, 0)
RED = (220, 0, 0)
CYAN = (0, 200, 220)
BLUE = (0, 60, 220)


@dataclass
class FrameImage:
    width: int
    height: int
    pixels: np.ndarray = field(repr=False)     # (height, width, 3) uint8, row 0 at the top

    @classmethod
    def blank(cls, width: int, height: int, color=WHITE) -> FrameImage:
        if width <= 0 or height <= 0:
            raise ValueError("image dimensions must be positive")
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[...] = color
        return cls(width, height, px)


class _Canvas:
    def __init__(self, img: FrameImage, scale: float, scene_h: float):
        self.img = img
        self.scale = scale
        self.scene_h = scene_h

    def to_px(self, x, y):
        return x * self.scale, (self.scene_h - y) * self.scale

    def _span(self, lo, hi, limit):
        a = max(int(math.floor(lo)), 0)
        b = min(int(math.ceil(hi)), limit)
        return a, b

    def fill(self, box, color):
        x0, y0 = self.to_px(box.left, box.top)
        x1, y1 = self.to_px(box.right, box.bottom)
        c0, c1 = self._span(x0, x1, self.img.width)
        r0, r1 = self._span(y0, y1, self.img.height)
        if c0 < c1 and r0 < r1:
            self.img.pixels[r0:r1, c0:c1] = color

    def outline(self, box, color):
        x0, y0 = self.to_px(box.left, box.top)
        x1, y1 = self.to_px(box.right, box.bottom)
        c0, c1 = self._span(x0, x1, self.img.width)
        r0, r1 = self._span(y0, y1, self.img.height)
        if c0 >= c1 or r0 >= r1:
            return
        px = self.img.pixels
        px[r0, c0:c1] = color
        px[r1 - 1, c0:c1] = color
        px[r0:r1, c0] = color
        px[r0:r1, c1 - 1] = color

    def line(self, p, q, color, alpha):
        (x0, y0), (x1, y1) = self.to_px(*p), self.to_px(*q)
        n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
        xs = np.rint(np.linspace(x0, x1, n)).astype(int)
        ys = np.rint(np.linspace(y0, y1, n)).astype(int)
        ok = (xs >= 0) & (xs < self.img.width) & (ys >= 0) & (ys < self.img.height)
        xs, ys = xs[ok], ys[ok]
        pts = np.unique(np.stack([ys, xs], axis=1), axis=0)
        if not len(pts):
            return
        px = self.img.pixels
        cur = px[pts[:, 0], pts[:, 1]].astype(np.float64)
        blended = (1.0 - alpha) * cur + alpha * np.asarray(color, dtype=np.float64)
        px[pts[:, 0], pts[:, 1]] = np.rint(blended).astype(np.uint8)


def render_frame(state: EnvState, controlled: int | None = None,
                 contributions: ContributionReport | None = None,
                 scale: float = 200.0) -> FrameImage:
    """Rasterize the scene: objects filled (black, green once captured),
    sensor views outlined (controlled cyan, others blue), and optional
    contribution lines (green positive, red negative, intensity relative
    to the largest magnitude in this frame)."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    scene = state.scene
    img = FrameImage.blank(max(1, int(round(scene.width * scale))),
                           max(1, int(round(scene.height * scale))))
    canvas = _Canvas(img, scale, scene.height)
    for o in state.objects:
        canvas.fill(o.box, GREEN if o.captured else BLACK)
    for s in state.sensors:
        if s.id != controlled:
            canvas.outline(s.view, BLUE)
    for s in state.sensors:
        if s.id == controlled:
            canvas.outline(s.view, CYAN)
    if contributions is not None and len(contributions.values):
        centers = {("s", s.id): (s.view.cx, s.view.cy) for s in state.sensors}
        centers.update({("o", o.id): (o.box.cx, o.box.cy) for o in state.objects})
        peak = float(np.max(np.abs(contributions.values)))
        ckey = ("s", controlled)
        for (a, b), v in zip(contributions.pairs, contributions.values):
            a, b = tuple(a), tuple(b)
            if peak == 0.0 or v == 0.0 or a not in centers or b not in centers:
                continue
            if b == ckey:
                a, b = b, a
            canvas.line(centers[a], centers[b], GREEN if v > 0 else RED, abs(v) / peak)
    return img


def write_ppm(img: FrameImage, path) -> None:
    path = Path(path)
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(img.pixels, dtype=np.uint8).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write image {path}: {exc}") from exc


def read_ppm(path) -> FrameImage:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(tokens[1]), int(tokens[2])
    px = np.frombuffer(data[pos:pos + w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()
    return FrameImage(w, h, px)


def write_sidecar(report: ContributionReport, path, t: int | None = None) -> None:
    Path(path).write_text(json.dumps(report.sidecar(t)) + "\n")


@dataclass
class MaskingStudy:
    rho: float
    p_value: float
    mean_top: float         # mean |KL change| when the largest-|contribution| relation is gated off
    mean_bottom: float      # same for the smallest
    draws: int


def masking_study(draws: int = 100, seed: int = 0, reverse: bool = False) -> MaskingStudy:
    """Ablate each relation of random (params, relation set) draws and rank-correlate
    |contribution| with the resulting |change in KL|."""
    from scipy.stats import spearmanr

    rng = np.random.default_rng(seed)
    mags, deltas, top, bottom = [], [], [], []
    for d in range(draws):
        params = rn.init_params(int(rng.integers(2**31)))
        n = int(rng.integers(2, 13))
        rel = RelationSet(rng.uniform(0.0, 1.0, (n, 60)), [None] * n, np.zeros(20))
        rep = relation_contributions(params, rel, reverse)
        base = gated_kl(params, rel, np.ones(n), reverse)
        change = np.empty(n)
        for i in range(n):
            g = np.ones(n)
            g[i] = 0.0
            change[i] = abs(gated_kl(params, rel, g, reverse) - base)
        mag = np.abs(rep.values)
        mags.extend(mag)
        deltas.extend(change)
        top.append(change[np.argmax(mag)])
        bottom.append(change[np.argmin(mag)])
    rho, p = spearmanr(mags, deltas)
    return MaskingStudy(float(rho), float(p), float(np.mean(top)), float(np.mean(bottom)), draws)
