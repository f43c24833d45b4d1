"""Command line entry point: ``sstrl <verb> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .container import CheckpointError
from .tablesim import DemoSet, HELD_OUT_TASKS, generate_demos, get_task, read_demos, write_demos
from .trainer import (ABLATIONS, ConfigError, RunConfig, System, eval_incomplete, eval_oneshot,
                      eval_standard, run_sstrl, write_manifest)

OUTPUT_ROOT_ENV = "SSTRL_OUTPUT_ROOT"
log = logging.getLogger("sstrl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _task_list(text: str) -> List[int]:
    try:
        ids = [int(t) for t in text.split(",") if t.strip()]
        for t in ids:
            get_task(t)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return ids


def _ablation(text: str) -> str:
    name = text.replace("-", "_")
    if name not in ABLATIONS:
        raise argparse.ArgumentTypeError(f"unknown ablation {text!r}")
    return name


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def _write_json_manifest(path: Path, command: str, args: dict) -> None:
    doc = {"command": command, "package_version": __version__, "args": args}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


# -- verbs ---------------------------------------------------------------------

def cmd_gen_demos(a) -> int:
    out = Path(a.out) if a.out else _output_root() / "demos.jsonl"
    if out.exists() and not a.force:
        raise UsageError(f"{out} exists (use --force to overwrite)")
    out.parent.mkdir(parents=True, exist_ok=True)
    demos = generate_demos(a.tasks, a.per_task, a.seed)
    write_demos(out, demos)
    _write_json_manifest(_manifest_path(out), "gen-demos",
                         {"tasks": a.tasks, "per_task": a.per_task, "seed": a.seed, "out": str(out)})
    lengths = np.array([len(d) for d in demos])
    print(f"wrote {len(demos)} demonstrations to {out}")
    for t in a.tasks:
        lt = np.array([len(d) for d in demos if d.task_id == t])
        print(f"  task {t}: {len(lt)} demos, length mean {lt.mean():.1f} min {lt.min()} max {lt.max()}")
    print(f"  overall length mean {lengths.mean():.1f}")
    return 0


def _train_config(a) -> RunConfig:
    if a.config:
        cfg = RunConfig.load(a.config)
    else:
        cfg = RunConfig()
    overrides = {"setting": a.setting, "ablation": a.ablation, "episodes": a.episodes,
                 "seed": a.seed, "demo_path": a.demos, "batch_size": a.batch_size,
                 "ssl_batch_size": a.batch_size, "update_every": a.update_every,
                 "warmup": a.warmup, "demos_per_task": a.per_task}
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    if a.tasks is not None:
        cfg.tasks = a.tasks
    if a.milestones is not None:
        cfg.milestones = a.milestones
    return cfg.validate()


def cmd_train(a) -> int:
    try:
        cfg = _train_config(a)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"invalid config: {exc}") from None
    out = Path(a.out) if a.out else _output_root() / f"{cfg.setting}-{cfg.ablation}-s{cfg.seed}"
    run_sstrl(cfg, out)
    print(f"metrics, checkpoint and manifest written to {out}")
    return 0


def _load_system(path: str) -> System:
    return System.load(path)


def _write_records(out: Path, records: List[dict], command: str, args: dict) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    _write_json_manifest(_manifest_path(out), command, args)


def cmd_eval(a) -> int:
    system = _load_system(a.checkpoint)
    tasks = system.cfg.tasks
    if a.mode == "standard":
        res = eval_standard(system, tasks, a.trials, a.seed)
        records = [{"task": t, "success": s, "trials": a.trials} for t, s in res.items()]
        for r in records:
            print(f"task {r['task']}: success {r['success']:.3f} over {a.trials} trials")
    else:
        crops = min(10, a.trials)
        n_demos = -(-a.trials // crops)
        res = eval_incomplete(system, tasks, n_demos, crops, a.seed)
        records = res["rows"][:a.trials]
        cs = np.mean([r["cropped_success"] for r in records])
        fs = np.mean([r["complete_success"] for r in records])
        print(f"incomplete demos: cropped success {cs:.3f}, complete success {fs:.3f} ({len(records)} rows)")
    out = Path(a.out) if a.out else Path(a.checkpoint).with_name(f"eval_{a.mode}.jsonl")
    _write_records(out, records, "eval", vars(a))
    return 0


def cmd_oneshot(a) -> int:
    system = _load_system(a.checkpoint)
    res = eval_oneshot(system, HELD_OUT_TASKS, a.trials, a.seed)
    records = [{"task": t, "name": get_task(t).name, "success": s, "trials": a.trials}
               for t, s in res.items()]
    for r in records:
        print(f"task {r['task']} ({r['name']}): success {r['success']:.3f}")
    out = Path(a.out) if a.out else Path(a.checkpoint).with_name("oneshot.jsonl")
    _write_records(out, records, "oneshot", vars(a))
    return 0


def cmd_inspect_gwr(a) -> int:
    system = _load_system(a.checkpoint)
    h = system.main.hierarchy
    if h is None:
        raise UsageError("this checkpoint has no growing networks")
    nets = h.nets()
    names = list(nets) if a.net == "all" else [a.net]
    for n in names:
        if n not in nets:
            raise UsageError(f"checkpoint has no {n!r} net (available: {', '.join(nets)})")
    out_dir = Path(a.out) if a.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    for n in names:
        net = nets[n]
        print(f"{n}: {len(net)} nodes, {net.n_edges} edges")
        if out_dir:
            (out_dir / f"gwr_{n}.json").write_text(net.to_json())
            (out_dir / f"gwr_{n}.dot").write_text(net.to_dot(f"gwr_{n}"))
    if out_dir:
        _write_json_manifest(out_dir / "manifest.json", "inspect-gwr", vars(a))
    return 0


def cmd_plot(a) -> int:
    from .plotting import plot_metrics
    out = Path(a.out) if a.out else _output_root() / "plots"
    paths = plot_metrics(a.metrics, out, window=a.window)
    _write_json_manifest(out / "manifest.json", "plot", vars(a))
    for p in paths:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sstrl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-demos", help="generate a scripted demonstration dataset")
    g.add_argument("--tasks", type=_task_list, default=[1, 2, 3, 4])
    g.add_argument("--per-task", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_demos)

    t = sub.add_parser("train", help="run the training loop")
    t.add_argument("--config")
    t.add_argument("--setting", choices=["fixed", "continual"])
    t.add_argument("--ablation", type=_ablation)
    t.add_argument("--episodes", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--demos", help="demonstration dataset (default: generate in memory)")
    t.add_argument("--per-task", type=int, help="demos per task when generating in memory")
    t.add_argument("--tasks", type=_task_list)
    t.add_argument("--milestones", type=lambda s: [int(x) for x in s.split(",")])
    t.add_argument("--batch-size", type=int)
    t.add_argument("--update-every", type=int)
    t.add_argument("--warmup", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on complete or cropped demos")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--mode", choices=["standard", "incomplete"], default="standard")
    e.add_argument("--trials", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("oneshot", help="one-shot evaluation on the held-out tasks")
    o.add_argument("--checkpoint", required=True)
    o.add_argument("--trials", type=int, default=100)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out")
    o.set_defaults(func=cmd_oneshot)

    i = sub.add_parser("inspect-gwr", help="summarize or export the growing networks")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--net", choices=["act", "int", "b", "all"], default="all")
    i.add_argument("--out", help="directory for JSON and DOT exports")
    i.set_defaults(func=cmd_inspect_gwr)

    pl = sub.add_parser("plot", help="learning curves from metrics files")
    pl.add_argument("--metrics", nargs="+", required=True)
    pl.add_argument("--out")
    pl.add_argument("--window", type=int, default=200)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose or args.verb == "train" else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (CheckpointError, ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
