"""Command-line entry points.

    cmlearn collect   --config c.json      dataset.jsonl
    cmlearn train     --config c.json      model_<mode>_<objective>.json, trainlog_<...>.csv
    cmlearn eval      --config c.json      eval_<model>.csv
    cmlearn sweep     --config c.json      sweep.csv
    cmlearn ctrl-demo --config c.json      demo_trace.jsonl, demo_trajectory.csv
    cmlearn report    --config c.json      report.csv (model comparison table)

Every command writes ``<command>.manifest.json`` next to its outputs. Exit
status: 0 success, 1 configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, config_from_dict, load_config, validate
from .data import load_dataset, save_dataset
from .harness import ResidualModel, collect, evaluate, roll_error_sweep, train_model, train_with_dagger
from .controller import MPCPolicy
from .mlp import load_checkpoint, save_checkpoint
from .sim import AnalyticImpactModel, drive, episode

log = logging.getLogger("cmlearn")

ARMS = [("full", "unconstrained"), ("full", "constrained"), ("residual", "unconstrained"), ("residual", "constrained")]


class RuntimeFailure(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage mistakes are configuration errors
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- output helpers ----------------------------------------------------------------

def git_blob_id(data: bytes) -> str:
    """Content id computed the way git names a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _comment(cfg: RunConfig) -> str:
    return f"config_hash={cfg.config_hash()} seed={cfg.seed}"


class Run:
    """Collects written files and emits the manifest for one command."""

    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs = {}
        self.extra = {}

    def path(self, name: str) -> Path:
        return self.out / name

    def record(self, name: str):
        data = self.path(name).read_bytes()
        self.outputs[name] = {"sha256": hashlib.sha256(data).hexdigest(), "content_id": git_blob_id(data)}

    def write_text(self, name: str, text: str):
        self.path(name).write_text(text)
        self.record(name)

    def finish(self):
        doc = {
            "command": self.command,
            "version": __version__,
            "config_hash": self.cfg.config_hash(),
            "seed": self.cfg.seed,
            "config": self.cfg.to_dict(),
            "outputs": self.outputs,
            **self.extra,
        }
        self.path(f"{self.command}.manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _arm_name(mode: str, objective: str) -> str:
    return f"{mode}_{objective}"


def _load_model(spec: str, cfg: RunConfig):
    """``truth``, ``analytic`` (the faulty model) or a checkpoint path."""
    alpha = cfg.sim.restitution_alpha
    if spec == "truth":
        return AnalyticImpactModel(alpha, 0.0), "truth"
    if spec == "analytic":
        return AnalyticImpactModel(alpha, cfg.experiment.analytic_roll_error), "analytic"
    path = Path(spec)
    if not path.exists():
        raise RuntimeFailure(f"checkpoint not found: {path}")
    net, doc = load_checkpoint(path)
    name = path.stem[len("model_"):] if path.stem.startswith("model_") else path.stem
    if doc.get("mode") == "residual":
        return ResidualModel(AnalyticImpactModel(doc["restitution_alpha"], doc["base_roll_error"]), net), name
    return net, name


def _default_model(cfg: RunConfig) -> str:
    return str(Path(cfg.out_dir) / f"model_{_arm_name(cfg.experiment.mode, cfg.experiment.objective)}.json")


def _dataset(args, cfg: RunConfig):
    path = Path(args.data) if args.data else Path(cfg.out_dir) / "dataset.jsonl"
    if not path.exists():
        raise RuntimeFailure(f"dataset not found: {path} (run `collect` first or pass --data)")
    return load_dataset(path)


# -- commands ----------------------------------------------------------------------

def cmd_collect(args, cfg: RunConfig):
    run = Run("collect", cfg)
    data = collect(cfg.experiment_config(), cfg.sim_config(), cfg.solve_options())
    save_dataset(run.path("dataset.jsonl"), data)
    run.record("dataset.jsonl")
    run.extra["impacts"] = len(data)
    run.finish()
    log.info("collected %d impacts -> %s", len(data), run.path("dataset.jsonl"))


def cmd_train(args, cfg: RunConfig):
    run = Run("train", cfg)
    data = _dataset(args, cfg)
    exp = cfg.experiment_config()
    if exp.dagger_rounds:
        trained, data = train_with_dagger(data, exp, cfg.train_config(), cfg.sim_config(), cfg.solve_options())
    else:
        trained = train_model(data, exp, cfg.train_config(), cfg.sim_config())
    arm = _arm_name(exp.mode, exp.objective)
    ck = f"model_{arm}.json"
    save_checkpoint(run.path(ck), trained.net, {
        "mode": exp.mode,
        "objective": exp.objective,
        "base_roll_error": exp.analytic_roll_error,
        "restitution_alpha": cfg.sim.restitution_alpha,
        "config_hash": cfg.config_hash(),
        "lambdas": [float(v) for v in trained.dual.lambdas],
    })
    run.record(ck)
    run.write_text(f"trainlog_{arm}.csv", trained.log.to_csv(_comment(cfg)))
    run.extra["checkpoint_id"] = run.outputs[ck]["content_id"]
    run.extra["training_samples"] = len(data)
    v = trained.log.validation
    if v is not None:
        run.extra["validation"] = {
            "objective": v.objective,
            "slacks": [float(s) for s in v.slacks],
            "complementary": [float(s) for s in v.complementary],
            "dual_feasible": v.dual_feasible,
        }
    run.finish()
    log.info("trained %s on %d samples -> %s", arm, len(data), run.path(ck))


def cmd_eval(args, cfg: RunConfig):
    run = Run("eval", cfg)
    model, name = _load_model(args.model or _default_model(cfg), cfg)
    s = evaluate(model, cfg.experiment_config(), cfg.sim_config(), cfg.solve_options())
    run.write_text(f"eval_{name}.csv", s.to_csv(_comment(cfg)))
    run.extra["summary"] = {"model": name, "failure_rate": s.failure_rate, "mean_error": s.mean_error, "std_error": s.std_error}
    run.finish()
    me = "n/a" if s.mean_error is None else f"{s.mean_error:.4f}"
    print(f"{name}: failure rate {s.failure_rate:.1%}, mean error {me} over {s.episodes} episodes")


def cmd_sweep(args, cfg: RunConfig):
    run = Run("sweep", cfg)
    data = _dataset(args, cfg)
    rep = roll_error_sweep(cfg.sweep.roll_errors, cfg.experiment_config(), data, cfg.train_config(),
                           cfg.sim_config(), cfg.solve_options(), cfg.sweep.episodes)
    run.write_text("sweep.csv", rep.to_csv(_comment(cfg)))
    run.finish()
    for r in rep.rows:
        me = "n/a" if r["mean_error"] is None else f"{r['mean_error']:.4f}"
        print(f"roll error {r['roll_error']:.2f}  {r['arm']:<9} mean error {me}")


def cmd_ctrl_demo(args, cfg: RunConfig):
    run = Run("ctrl-demo", cfg)
    model, name = _load_model(args.model or "truth", cfg)
    task = cfg.demo_task()
    policy = MPCPolicy(model, task, cfg.solve_options(), cfg.sim_config())
    trace = drive(episode(task.p_desired, cfg.sim_config(), cfg.demo.bounces, 0, True), policy)
    run.write_text("demo_trace.jsonl", trace.to_jsonl())
    buf = io.StringIO()
    buf.write(f"# {_comment(cfg)} model={name}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "x", "y", "z"])
    for row in trace.trajectory:
        w.writerow([repr(float(v)) for v in row])
    run.write_text("demo_trajectory.csv", buf.getvalue())
    run.extra["termination"] = trace.termination
    run.finish()
    me = "n/a" if trace.mean_error is None else f"{trace.mean_error:.4f}"
    print(f"{name}: {len(trace.bounces)} bounces, {trace.termination}, mean landing error {me}")


def read_eval_csv(path) -> dict:
    """Failure rate and mean error recomputed from a per-episode eval CSV."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    if not rows:
        raise RuntimeFailure(f"{path}: no episode rows")
    failed = [int(r["failed"]) for r in rows]
    ok = [float(r["mean_error"]) for r in rows if not int(r["failed"]) and r["mean_error"]]
    return {
        "episodes": len(rows),
        "failure_rate": sum(failed) / len(rows),
        "mean_error": sum(ok) / len(ok) if ok else None,
    }


def report_table(results: dict) -> tuple[str, str]:
    """(csv, markdown) for the model comparison table; missing arms show as n/a."""
    def fmt_rate(r):
        return "n/a" if r is None else f"{100 * r['failure_rate']:.1f}%"

    def fmt_err(r):
        return "n/a" if r is None or r["mean_error"] is None else f"{r['mean_error']:.4f}"

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "metric", "unconstrained", "constrained"])
    md = ["| model | metric | unconstrained | constrained |", "|---|---|---|---|"]
    for mode in ("full", "residual"):
        u, c = results.get(_arm_name(mode, "unconstrained")), results.get(_arm_name(mode, "constrained"))
        for metric, f in (("failure", fmt_rate), ("mean_error", fmt_err)):
            w.writerow([mode, metric, f(u), f(c)])
            md.append(f"| {mode} | {metric} | {f(u)} | {f(c)} |")
    for extra in ("analytic", "truth"):
        r = results.get(extra)
        if r is not None:
            w.writerow([extra, "failure", fmt_rate(r), ""])
            w.writerow([extra, "mean_error", fmt_err(r), ""])
            md.append(f"| {extra} | failure / mean_error | {fmt_rate(r)} / {fmt_err(r)} | |")
    return buf.getvalue(), "\n".join(md)


def cmd_report(args, cfg: RunConfig):
    run = Run("report", cfg)
    src = Path(args.inputs) if args.inputs else run.out
    results = {}
    for name in [_arm_name(*a) for a in ARMS] + ["analytic", "truth"]:
        p = src / f"eval_{name}.csv"
        if p.exists():
            results[name] = read_eval_csv(p)
    if not results:
        raise RuntimeFailure(f"no eval_*.csv files in {src}")
    table, md = report_table(results)
    run.write_text("report.csv", f"# {_comment(cfg)}\n" + table)
    run.extra["arms"] = sorted(results)
    run.finish()
    print(md)


COMMANDS = {
    "collect": cmd_collect,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ctrl-demo": cmd_ctrl_demo,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cmlearn", description="Constrained model learning for ball-paddle control.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="run config JSON (defaults apply when omitted)")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", help="override the config out_dir")
        s.add_argument("-v", "--verbose", action="store_true")
        if name in ("train", "eval"):
            s.add_argument("--mode", choices=["full", "residual"], help="override experiment.mode")
            s.add_argument("--objective", choices=["unconstrained", "constrained"], help="override experiment.objective")
        if name in ("train", "sweep"):
            s.add_argument("--data", help="dataset JSON-lines (default: <out>/dataset.jsonl)")
        if name in ("eval", "ctrl-demo"):
            s.add_argument("--model", help="'truth', 'analytic' or a checkpoint path")
        if name == "report":
            s.add_argument("--inputs", help="directory holding eval_*.csv (default: <out>)")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    cfg = cfg.with_overrides(args.seed, args.out)
    over = {k: getattr(args, k, None) for k in ("mode", "objective")}
    over = {k: v for k, v in over.items() if v is not None}
    if over:
        cfg = replace(cfg, experiment=replace(cfg.experiment, **over))
    return validate(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeFailure, RuntimeError, ValueError, OSError, FloatingPointError) as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
