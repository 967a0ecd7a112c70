"""Command-line entry point: ``rncover <subcommand> ...``.

Exit status is 0 on success, 1 on a runtime failure (one-line diagnostic
on stderr) and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, baselines, trainer
from . import io as rio
from .observation import FrameHistory, observe
from .sim import ConfigError, init_episode, step


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default="default",
                   help="YAML config file, or 'default' for built-in defaults")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. --set trainer.gamma=0.95 (repeatable)")
    p.add_argument("--seed", type=int, help="overrides the config's top-level seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rncover", description="Train, evaluate and inspect relational actor-critic sensor controllers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an agent; writes a checkpoint and a JSONL log")
    _common(p)
    p.add_argument("--out", default="agent.ck", help="checkpoint path")
    p.add_argument("--log", default=None, help="training log path (default: <out>.log.jsonl)")
    p.add_argument("--steps", type=int, help="overrides trainer.total_env_steps")
    p.add_argument("--workers", type=int, help="overrides trainer.n_workers")

    p = sub.add_parser("search", help="random hyperparameter search")
    _common(p)
    p.add_argument("--out-dir", default="search", help="directory for per-agent checkpoints")
    p.add_argument("--agents", type=int, help="overrides search.agents")

    p = sub.add_parser("eval", help="evaluate a checkpoint or a baseline")
    _common(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint")
    g.add_argument("--baseline", choices=["random", "random-noop", "lawnmower", "noop"])
    p.add_argument("--episodes", type=int, help="overrides eval.episodes")
    p.add_argument("--mode", choices=["deterministic", "stochastic"],
                   help="overrides eval.action_mode")

    p = sub.add_parser("replay", help="run a policy over a recorded detection trace")
    _common(p)
    p.add_argument("--trace", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint")
    g.add_argument("--baseline", choices=["random", "random-noop", "lawnmower", "noop"])
    p.add_argument("--sensors", type=int, default=1)
    p.add_argument("--mode", choices=["deterministic", "stochastic"])
    p.add_argument("--frames", help="directory to write P6 frames into")

    p = sub.add_parser("analyze", help="relation contributions along one episode")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--out-dir", help="overrides render.output_dir")
    p.add_argument("--reverse-kl", action="store_true", help="use KL(pi || uniform) instead")

    p = sub.add_parser("render", help="render simulator frames under a baseline policy")
    _common(p)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--baseline", default="lawnmower",
                   choices=["random", "random-noop", "lawnmower", "noop"])
    p.add_argument("--out-dir", help="overrides render.output_dir")

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("config", help="print the configuration reference or a resolved config")
    _common(p)
    p.add_argument("--resolved", action="store_true", help="print the merged config instead")
    return parser


def _load_config(args) -> rio.Config:
    overrides = list(args.set)
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    for flag, key in (("steps", "trainer.total_env_steps"), ("workers", "trainer.n_workers"),
                      ("agents", "search.agents"), ("episodes", "eval.episodes"),
                      ("mode", "eval.action_mode"), ("out_dir", "render.output_dir")):
        if args.command in ("analyze", "render") and flag == "steps":
            continue
        if args.command == "search" and flag == "out_dir":
            continue
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return rio.parse_config(args.config, overrides)


def _progress(rec):
    logging.getLogger("rncover.train").info(
        "update=%d steps=%d capture=%s entropy=%.3f", rec["update"], rec["env_steps"],
        "n/a" if rec["capture_pct"] is None else f"{rec['capture_pct']:.1f}", rec["entropy"])


def cmd_train(args) -> int:
    cfg = _load_config(args)
    log_path = args.log or f"{args.out}.log.jsonl"
    Path(log_path).unlink(missing_ok=True)
    res = trainer.train(cfg.trainer, cfg.env, log_path=log_path, progress=_progress)
    rio.save_checkpoint(args.out, res.params)
    rio.save_optimizer(f"{args.out}.opt", res.optimizer)
    print(json.dumps({"checkpoint": args.out, "log": log_path, "env_steps": res.env_steps,
                      "updates": res.updates}))
    return 0


def cmd_search(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = trainer.hyperparameter_search(cfg.search, cfg.trainer, cfg.env,
                                            cfg.eval.episodes, cfg.seed, cfg.eval.action_mode)
    for r in results:
        rec = r.record()
        if r.params is not None:
            path = out_dir / f"agent{r.agent}.ck"
            rio.save_checkpoint(path, r.params)
            rec["checkpoint"] = str(path)
        print(json.dumps(rec))
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    if args.baseline:
        policy = baselines.make_baseline(args.baseline)
    else:
        policy = baselines.AgentController(rio.load_checkpoint(args.checkpoint),
                                           cfg.eval.action_mode, cfg.trainer.aggregation)
    report = baselines.evaluate(policy, cfg.env, cfg.eval.episodes, cfg.seed)
    print(report.to_json())
    return 0


def cmd_replay(args) -> int:
    cfg = _load_config(args)
    trace = rio.load_trace(args.trace)
    policy = args.baseline or args.checkpoint
    scale = cfg.render.scale / max(trace.scene.width, trace.scene.height) if args.frames else None
    res = rio.replay(trace, policy, args.sensors, cfg.eval.action_mode, cfg.env, cfg.seed,
                     cfg.trainer.aggregation, render_scale=scale)
    if args.frames:
        out = Path(args.frames)
        out.mkdir(parents=True, exist_ok=True)
        for k, img in enumerate(res.frames):
            analysis.write_ppm(img, out / f"frame{k:05d}.ppm")
    print(res.report.to_json())
    return 0


def cmd_analyze(args) -> int:
    cfg = _load_config(args)
    params = rio.load_checkpoint(args.checkpoint)
    out = Path(cfg.render.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = init_episode(cfg.env, cfg.seed)
    histories = {s.id: FrameHistory() for s in state.sensors}
    controller = baselines.AgentController(params, cfg.eval.action_mode, cfg.trainer.aggregation)
    controller.reset(state, np.random.default_rng(cfg.seed))
    written = 0
    for t in range(args.steps):
        if state.done:
            break
        rel = observe(histories[0], state, 0)
        if len(rel):
            report = analysis.relation_contributions(params, rel, args.reverse_kl,
                                                     cfg.trainer.aggregation)
            analysis.write_sidecar(report, out / f"contrib{t:05d}.json", t)
            img = analysis.render_frame(state, 0, report, cfg.render.scale)
            analysis.write_ppm(img, out / f"contrib{t:05d}.ppm")
            written += 1
        state, _ = step(state, controller.act(state))
    print(json.dumps({"frames": written, "output_dir": str(out)}))
    return 0


def cmd_render(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.render.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = init_episode(cfg.env, cfg.seed)
    controller = baselines.make_baseline(args.baseline)
    controller.reset(state, np.random.default_rng(cfg.seed))
    n = 0
    for t in range(args.steps):
        analysis.write_ppm(analysis.render_frame(state, 0, None, cfg.render.scale),
                           out / f"frame{t:05d}.ppm")
        n += 1
        if state.done:
            break
        state, _ = step(state, controller.act(state))
    print(json.dumps({"frames": n, "output_dir": str(out)}))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    result = run_suite(range(args.seeds))
    print(json.dumps({"max_rel_error": result.max_rel_error, "checked": result.checked,
                      "skipped_kinks": result.skipped, "worst": result.worst}))
    if result.max_rel_error >= args.tolerance:
        print(f"gradcheck failed: max relative error {result.max_rel_error:.3e} "
              f">= {args.tolerance:g}", file=sys.stderr)
        return 1
    return 0


def cmd_config(args) -> int:
    if args.resolved:
        sys.stdout.write(rio.serialize_config(_load_config(args)))
    else:
        sys.stdout.write(rio.config_reference())
    return 0


COMMANDS = {
    "train": cmd_train,
    "search": cmd_search,
    "eval": cmd_eval,
    "replay": cmd_replay,
    "analyze": cmd_analyze,
    "render": cmd_render,
    "gradcheck": cmd_gradcheck,
    "config": cmd_config,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"rncover {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"rncover {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
