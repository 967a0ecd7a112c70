"""Asynchronous advantage actor-critic training.

Each worker owns one simulator. All sensors in a worker's scene are
steered by the same network, but only sensor 0 (the main agent) produces
training transitions, and it is credited with the rewards of every
sensor. Workers copy the global parameters, roll out up to ``t_max``
steps, and push clipped gradients through a shared RMSProp optimizer.
"""

from __future__ import annotations

import json
import logging
import math
import queue
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import agent as rn
from . import autodiff as ad
from .observation import FrameHistory, RelationSet, observe
from .sim import ConfigError, EnvConfig, init_episode, step

log = logging.getLogger(__name__)

MAIN_AGENT = 0


@dataclass
class TrainerConfig:
    n_workers: int = 16
    t_max: int = 20
    gamma: float = 0.99
    beta: float = 0.01
    lr: float = 1e-4
    value_loss_weight: float = 0.5
    total_env_steps: int = 1_000_000
    seed: int = 0
    max_grad_norm: float = 40.0
    rms_decay: float = 0.99
    rms_eps: float = 0.1
    aggregation: str = "sum"
    backend: str = "thread"          # "thread" or "serial" (round-robin, deterministic)
    log_every: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def bad(key, msg):
            raise ConfigError(f"trainer.{key}: {msg}")

        if int(self.n_workers) != self.n_workers or self.n_workers < 1:
            bad("n_workers", "must be a positive integer")
        if int(self.t_max) != self.t_max or self.t_max < 1:
            bad("t_max", "must be a positive integer")
        if not (0.0 < self.gamma <= 1.0):
            bad("gamma", f"must lie in (0, 1], got {self.gamma}")
        if not self.beta >= 0:
            bad("beta", "must be non-negative")
        if not self.lr > 0:
            bad("lr", "must be positive")
        if not self.value_loss_weight > 0:
            bad("value_loss_weight", "must be positive")
        if self.total_env_steps < 1:
            bad("total_env_steps", "must be positive")
        if not self.max_grad_norm > 0:
            bad("max_grad_norm", "must be positive")
        if not 0.0 <= self.rms_decay < 1.0:
            bad("rms_decay", "must lie in [0, 1)")
        if not self.rms_eps >= 0:
            bad("rms_eps", "must be non-negative")
        if self.aggregation not in ("sum", "mean"):
            bad("aggregation", "must be 'sum' or 'mean'")
        if self.backend not in ("thread", "serial"):
            bad("backend", "must be 'thread' or 'serial'")
        if self.log_every < 1:
            bad("log_every", "must be positive")


@dataclass
class Transition:
    relations: RelationSet
    action: int
    reward: float
    value: float


@dataclass
class RolloutBuffer:
    transitions: list[Transition] = field(default_factory=list)
    bootstrap: float = 0.0
    returns: np.ndarray | None = None
    advantages: np.ndarray | None = None
    episode_ended: bool = False

    def __len__(self):
        return len(self.transitions)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.transitions], dtype=np.float64)

    @property
    def values(self) -> np.ndarray:
        return np.array([t.value for t in self.transitions], dtype=np.float64)


def discounted_returns(rewards: Sequence[float], gamma: float, bootstrap: float) -> np.ndarray:
    """R_i = r_i + gamma R_{i+1}, seeded with R_k = bootstrap."""
    out = np.empty(len(rewards))
    acc = float(bootstrap)
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def compute_targets(buffer: RolloutBuffer, gamma: float) -> RolloutBuffer:
    buffer.returns = discounted_returns(buffer.rewards, gamma, buffer.bootstrap)
    buffer.advantages = buffer.returns - buffer.values
    return buffer


def entropy(probs) -> float:
    p = np.asarray(probs, dtype=np.float64)
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


@dataclass
class LossMetrics:
    policy_loss: float
    value_loss: float
    entropy: float
    grad_norm: float = 0.0


def policy_loss_graph(params, buffer: RolloutBuffer, beta: float, value_loss_weight: float,
                      tape: ad.Tape | None, train_mode: bool, rng: np.random.Generator | None,
                      aggregation: str = "sum"):
    """Build the negated objective; returns (loss, policy term, value term, mean entropy).

    Objective: sum_i [log pi(a_i|s_i) A_i + beta H(pi(s_i))]
               - value_loss_weight * sum_i (R_i - V(s_i))^2,
    with A_i and R_i held constant.
    """
    if buffer.returns is None:
        raise ValueError("compute_targets must run before the loss")
    sets = [t.relations for t in buffer.transitions]
    rows, segments = rn.stack_relation_sets(sets)
    n = len(sets)
    out = rn.network(params, rows, segments, n, train_mode=train_mode, rng=rng, tape=tape,
                     aggregation=aggregation)
    logp = ad.log_softmax(out.logits, tape)
    probs = ad.softmax(out.logits, tape)
    actions = np.array([t.action for t in buffer.transitions], dtype=np.intp)
    logp_a = ad.pick(logp, actions, tape)
    pg = ad.total(ad.mul(logp_a, ad.Tensor(buffer.advantages), tape), tape)
    ent_rows = ad.scale(ad.sum_last(ad.mul(probs, logp, tape), tape), -1.0, tape)
    ent = ad.total(ent_rows, tape)
    err = ad.sub(ad.Tensor(buffer.returns), out.values, tape)
    vloss = ad.total(ad.square(err, tape), tape)
    objective = ad.sub(ad.add(pg, ad.scale(ent, beta, tape), tape),
                       ad.scale(vloss, value_loss_weight, tape), tape)
    loss = ad.scale(objective, -1.0, tape)
    return loss, float(pg.data), float(vloss.data), float(ent.data) / max(n, 1)


def loss_and_grads(buffer: RolloutBuffer, params, beta: float, value_loss_weight: float,
                   rng: np.random.Generator | None = None, train_mode: bool = True,
                   aggregation: str = "sum") -> tuple[dict, LossMetrics]:
    """Gradients of the negated objective (descending them ascends it)."""
    tape = ad.Tape()
    loss, pg, vloss, ent = policy_loss_graph(params, buffer, beta, value_loss_weight, tape,
                                             train_mode and rng is not None, rng, aggregation)
    grads = ad.backward(tape, loss)
    for k in params:
        grads.setdefault(k, np.zeros_like(params[k]))
    return grads, LossMetrics(-pg, vloss, ent)


class Worker:
    """One simulator plus per-sensor observation histories."""

    def __init__(self, index: int, env_config: EnvConfig, seed: int, aggregation: str = "sum"):
        self.index = index
        self.env_config = env_config
        self.aggregation = aggregation
        ss = np.random.SeedSequence([seed, index])
        env_ss, act_ss = ss.spawn(2)
        self.env_seeds = np.random.default_rng(env_ss)
        self.rng = np.random.default_rng(act_ss)
        self.completed: deque[float] = deque(maxlen=100)
        self.episodes = 0
        self._new_episode()

    def _new_episode(self):
        self.state = init_episode(self.env_config, int(self.env_seeds.integers(2**63)))
        self.histories = {s.id: FrameHistory() for s in self.state.sensors}
        self.current: dict[int, RelationSet] | None = None

    def _observe(self) -> dict[int, RelationSet]:
        return {s.id: observe(self.histories[s.id], self.state, s.id) for s in self.state.sensors}

    def rollout(self, params, t_max: int, mode: str = "stochastic") -> RolloutBuffer:
        buf = RolloutBuffer()
        for _ in range(t_max):
            if self.current is None:
                self.current = self._observe()
            actions = []
            main = None
            for s in self.state.sensors:
                out = rn.forward(params, self.current[s.id], aggregation=self.aggregation)
                a = rn.select_action(out, mode, self.rng)
                actions.append(a)
                if s.id == MAIN_AGENT:
                    main = (self.current[s.id], int(a), out.value)
            self.state, result = step(self.state, actions)
            buf.transitions.append(Transition(main[0], main[1], float(sum(result.rewards)), main[2]))
            if result.done:
                total = self.state.total_objects
                self.completed.append(100.0 * len(self.state.captured_ids) / total if total else 0.0)
                self.episodes += 1
                buf.bootstrap = 0.0
                buf.episode_ended = True
                self._new_episode()
                return buf
            self.current = self._observe()
        main_rel = self.current[MAIN_AGENT]
        buf.bootstrap = rn.forward(params, main_rel, aggregation=self.aggregation).value
        return buf


def rollout(worker: Worker, params, t_max: int) -> RolloutBuffer:
    return worker.rollout(params, t_max)


@dataclass
class TrainResult:
    params: ad.ParameterStore
    optimizer: ad.RMSProp
    records: list[dict]
    env_steps: int
    updates: int


class TrainingLog:
    """Single consumer of per-update records; optionally appends JSON lines to a file."""

    def __init__(self, path=None):
        self.path = path
        self.records: list[dict] = []
        self.q: queue.Queue = queue.Queue()
        self._fh = open(path, "a") if path else None
        self._thread = threading.Thread(target=self._drain, daemon=True)
        self._thread.start()

    def _drain(self):
        while True:
            rec = self.q.get()
            if rec is None:
                break
            self.records.append(rec)
            if self._fh:
                self._fh.write(json.dumps(rec) + "\n")
                self._fh.flush()

    def put(self, rec: dict):
        self.q.put(rec)

    def close(self):
        self.q.put(None)
        self._thread.join()
        if self._fh:
            self._fh.close()


def apply_update(global_params: ad.ParameterStore, opt: ad.RMSProp, buffer: RolloutBuffer,
                 cfg: TrainerConfig, rng: np.random.Generator, snapshot=None) -> LossMetrics:
    """Targets, gradients, clipping and the optimizer step for one rollout."""
    compute_targets(buffer, cfg.gamma)
    grads, metrics = loss_and_grads(buffer, snapshot if snapshot is not None else global_params,
                                    cfg.beta, cfg.value_loss_weight, rng,
                                    aggregation=cfg.aggregation)
    metrics.grad_norm = ad.global_norm(grads)
    grads = ad.clip_global_norm(grads, cfg.max_grad_norm)
    opt.update(global_params, grads)
    return metrics


def train(config: TrainerConfig, env_config: EnvConfig, *, log_path=None,
          init: ad.ParameterStore | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Run A3C until `total_env_steps` environment steps have been consumed."""
    config.validate()
    env_config.validate()
    params = init.copy() if init is not None else rn.init_params(config.seed)
    rn.check_params(params)
    opt = ad.RMSProp(params, config.lr, config.rms_decay, config.rms_eps)
    workers = [Worker(i, env_config, config.seed, config.aggregation) for i in range(config.n_workers)]
    tlog = TrainingLog(log_path)
    counters = {"steps": 0, "updates": 0}
    count_lock = threading.Lock()
    stop = threading.Event()
    errors: list[BaseException] = []
    t0 = time.time()

    def one_update(w: Worker):
        with opt.lock:
            snapshot = params.copy()
        buf = w.rollout(snapshot, config.t_max)
        metrics = apply_update(params, opt, buf, config, w.rng, snapshot)
        with count_lock:
            counters["steps"] += len(buf)
            counters["updates"] += 1
            upd, steps = counters["updates"], counters["steps"]
            done = steps >= config.total_env_steps
        if upd % config.log_every == 0 or done:
            recent = [p for ww in workers for p in ww.completed]
            rec = {
                "update": upd,
                "env_steps": steps,
                "capture_pct": float(np.mean(recent)) if recent else None,
                "policy_loss": metrics.policy_loss,
                "value_loss": metrics.value_loss,
                "entropy": metrics.entropy,
                "lr": config.lr,
                "beta": config.beta,
                "gamma": config.gamma,
                "worker": w.index,
                "grad_norm": metrics.grad_norm,
                "wall_s": round(time.time() - t0, 3),
            }
            tlog.put(rec)
            if progress is not None:
                progress(rec)
        return done

    def loop(w: Worker):
        try:
            while not stop.is_set():
                if one_update(w):
                    stop.set()
        except BaseException as exc:  # abort everyone, report afterwards
            errors.append(exc)
            stop.set()

    try:
        if config.backend == "serial" or config.n_workers == 1:
            while not stop.is_set():
                for w in workers:
                    if one_update(w):
                        stop.set()
                        break
        else:
            threads = [threading.Thread(target=loop, args=(w,), name=f"a3c-{w.index}")
                       for w in workers]
            for th in threads:
                th.start()
            for th in threads:
                th.join()
    finally:
        tlog.close()
    if errors:
        raise RuntimeError(f"training worker failed: {errors[0]!r}") from errors[0]
    return TrainResult(params, opt, tlog.records, counters["steps"], counters["updates"])


# -- random hyperparameter search -------------------------------------------

@dataclass
class SearchSpec:
    lr: tuple = (1e-5, 1e-3)            # log-uniform
    beta: tuple = (1e-3, 5e-2)          # log-uniform
    gamma: tuple = (0.9, 0.95, 0.99, 0.995)
    agents: int = 4

    def __post_init__(self):
        self.lr, self.beta, self.gamma = tuple(self.lr), tuple(self.beta), tuple(self.gamma)
        self.validate()

    def validate(self):
        for key in ("lr", "beta"):
            lo, hi = getattr(self, key)
            if not (0 < lo <= hi):
                raise ConfigError(f"search.{key}: need 0 < low <= high, got {(lo, hi)}")
        if not self.gamma or not all(0 < g <= 1 for g in self.gamma):
            raise ConfigError("search.gamma: need a nonempty set of values in (0, 1]")
        if self.agents < 1:
            raise ConfigError("search.agents: must be >= 1")


@dataclass
class SearchResult:
    agent: int
    seed: int
    lr: float
    beta: float
    gamma: float
    capture_pct: float | None
    error: str | None = None
    rank: int | None = None
    params: ad.ParameterStore | None = field(default=None, repr=False)

    def record(self) -> dict:
        d = asdict(self)
        d.pop("params")
        return d


def _log_uniform(rng, lo, hi):
    return float(lo) if lo == hi else float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def draw_hyperparameters(spec: SearchSpec, rng: np.random.Generator) -> tuple[float, float, float]:
    lr = _log_uniform(rng, *spec.lr)
    beta = _log_uniform(rng, *spec.beta)
    gamma = float(spec.gamma[int(rng.integers(len(spec.gamma)))])
    return lr, beta, gamma


def hyperparameter_search(spec: SearchSpec, trainer_config: TrainerConfig, env_config: EnvConfig,
                          eval_episodes: int = 100, eval_seed: int = 12345,
                          action_mode: str = "deterministic") -> list[SearchResult]:
    """Train `spec.agents` agents with random (lr, beta, gamma) and rank them.

    Every agent is scored on the same seeded evaluation episodes. Runs
    that blow up are kept in the report with their error and no score.
    """
    from dataclasses import replace

    from .baselines import AgentController, evaluate

    rng = np.random.default_rng(trainer_config.seed)
    results = []
    for k in range(spec.agents):
        lr, beta, gamma = draw_hyperparameters(spec, rng)
        seed = trainer_config.seed + 1000 * (k + 1)
        cfg = replace(trainer_config, lr=lr, beta=beta, gamma=gamma, seed=seed)
        try:
            res = train(cfg, env_config)
            report = evaluate(AgentController(res.params, action_mode, cfg.aggregation),
                              env_config, eval_episodes, eval_seed)
            results.append(SearchResult(k, seed, lr, beta, gamma, report.capture_pct,
                                        params=res.params))
        except (ad.NumericError, RuntimeError, FloatingPointError) as exc:
            log.warning("agent %d failed: %r", k, exc)
            results.append(SearchResult(k, seed, lr, beta, gamma, None, repr(exc)))
    ordered = sorted(results, key=lambda r: (r.capture_pct is None, -(r.capture_pct or 0.0)))
    for rank, r in enumerate(ordered, 1):
        r.rank = rank
    return ordered
