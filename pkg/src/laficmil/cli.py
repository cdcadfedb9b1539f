"""Command line: train, eval, verify, bench.

Settings resolve as built-in defaults, then a JSON ``--config`` file, then
flags.  Any failure prints one line on stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import experiment
from .attention import AttentionConfig
from .corpus import document_to_bag, generate_correlated_task, load_embeddings, read_dataset, split
from .model import ModelConfig, atomic_write, init_params, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate, train
from .verify import SUITES, run_suite

DEFAULTS = {
    "dataset": None,
    "embeddings": None,
    "synthetic": False,
    "bags": experiment.SYNTHETIC_BAGS,
    "instances": experiment.SYNTHETIC_INSTANCES,
    "seed": 0,
    "epochs": experiment.SYNTHETIC_EPOCHS,
    "lr": experiment.SYNTHETIC_LR,
    "dim": experiment.SYNTHETIC_DIM,
    "heads": experiment.SYNTHETIC_HEADS,
    "layers": 1,
    "landmarks": experiment.SYNTHETIC_LANDMARKS,
    "pinv_iterations": 6,
    "max_bag": 64,
    "num_labels": None,
    "chunk_size": 512,
    "task": "binary",
    "checkpoint": "model.ckpt",
    "out": None,
}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"usage: {message}")


def _add_settings(p: argparse.ArgumentParser):
    # defaults are SUPPRESS so only flags actually given override the config file
    s = argparse.SUPPRESS
    p.add_argument("--config", default=None, help="JSON file of settings")
    p.add_argument("--dataset", default=s)
    p.add_argument("--embeddings", default=s, help="embedding file for datasets that reference chunks")
    p.add_argument("--synthetic", action="store_true", default=s,
                   help="generate the ordered co-occurrence task instead of reading a dataset")
    p.add_argument("--bags", type=int, default=s)
    p.add_argument("--instances", type=int, default=s)
    p.add_argument("--seed", type=int, default=s)
    p.add_argument("--epochs", type=int, default=s)
    p.add_argument("--lr", type=float, default=s)
    p.add_argument("--dim", type=int, default=s)
    p.add_argument("--heads", type=int, default=s)
    p.add_argument("--layers", type=int, default=s)
    p.add_argument("--landmarks", type=int, default=s)
    p.add_argument("--pinv-iterations", dest="pinv_iterations", type=int, default=s)
    p.add_argument("--max-bag", dest="max_bag", type=int, default=s)
    p.add_argument("--num-labels", dest="num_labels", type=int, default=s)
    p.add_argument("--chunk-size", dest="chunk_size", type=int, default=s)
    p.add_argument("--task", choices=["binary", "multiclass", "multilabel"], default=s)
    p.add_argument("--checkpoint", default=s)
    p.add_argument("--out", default=s, help="directory for report.jsonl and summary.json")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="laficmil")
    verbs = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    _add_settings(verbs.add_parser("train", help="train a model and write a checkpoint"))
    _add_settings(verbs.add_parser("eval", help="score a dataset with a checkpoint"))
    v = verbs.add_parser("verify", help="run oracle and property suites")
    v.add_argument("suite", choices=[*SUITES, "all"])
    b = verbs.add_parser("bench", help="exact vs landmark attention, time and peak elements")
    b.add_argument("--n", type=int, nargs="*", default=[256, 1024, 4096])
    b.add_argument("--landmarks", type=int, default=8)
    b.add_argument("--repetitions", type=int, default=3)
    b.add_argument("--exact-cap", type=int, default=bench_mod.DEFAULT_EXACT_CAP)
    b.add_argument("--out", default=None, help="write records as JSON lines here")
    return parser


def resolve_settings(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except FileNotFoundError:
            raise CliError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise CliError(f"{args.config}: expected a JSON object")
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise CliError(f"{args.config}: unknown setting(s) {', '.join(unknown)}")
        settings.update(loaded)
    for key in DEFAULTS:
        if hasattr(args, key):
            settings[key] = getattr(args, key)
    return settings


def _model_config(s: dict, num_labels: int) -> ModelConfig:
    att = AttentionConfig(s["dim"], s["heads"], s["landmarks"], s["pinv_iterations"])
    return ModelConfig(att, num_layers=s["layers"], max_bag=s["max_bag"], num_labels=num_labels,
                       task=s["task"])


def _infer_labels(labels, task: str) -> int:
    if task == "binary":
        return 1
    if task == "multiclass":
        return max(int(np.asarray(y).reshape(-1)[0]) for y in labels) + 1
    sizes = {np.asarray(y).size for y in labels}
    if len(sizes) != 1:
        raise CliError(f"multilabel targets have mixed lengths {sorted(sizes)}")
    return sizes.pop()


def load_bags(s: dict, dim: int) -> tuple[list, list]:
    """Train and evaluation bags.  A dataset file is used whole for both."""
    if s["synthetic"]:
        if s["task"] != "binary":
            raise CliError("the synthetic task is binary; drop --task or set it to binary")
        return split(generate_correlated_task(s["bags"], s["instances"], dim, s["seed"]))
    if not s["dataset"]:
        raise CliError("need --dataset PATH or --synthetic")
    if not os.path.exists(s["dataset"]):
        raise CliError(f"dataset not found: {s['dataset']}")
    docs = read_dataset(s["dataset"])
    if not docs:
        raise CliError(f"dataset is empty: {s['dataset']}")
    emb = load_embeddings(s["embeddings"]) if s["embeddings"] else None
    bags = [document_to_bag(d, dim, chunk_size=s["chunk_size"], seed=s["seed"], embeddings=emb)
            for d in docs]
    return bags, bags


def _write_outputs(out: str | None, report_text: str, summary: dict):
    if out is None:
        return
    os.makedirs(out, exist_ok=True)
    atomic_write(os.path.join(out, "report.jsonl"), report_text.encode())
    atomic_write(os.path.join(out, "summary.json"),
                 (json.dumps(summary, sort_keys=True, indent=2) + "\n").encode())


def _ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def cmd_train(s: dict) -> int:
    _ensure_parent(s["checkpoint"])
    train_bags, eval_bags = load_bags(s, s["dim"])
    num_labels = s["num_labels"] or _infer_labels([b.label for b in train_bags], s["task"])
    model_cfg = _model_config(s, num_labels)
    params = init_params(model_cfg, s["seed"])
    cfg = TrainConfig(learning_rate=s["lr"], epochs=s["epochs"], task=s["task"], seed=s["seed"])
    report = train(train_bags, params, model_cfg, cfg, eval_set=eval_bags,
                   on_epoch=lambda r: print(r.to_json(), flush=True))
    save_checkpoint(s["checkpoint"], model_cfg, params)
    summary = {**report.summary(), "config": s, "checkpoint": s["checkpoint"]}
    _write_outputs(s["out"], report.lines(), summary)
    print(f"final metric {report.final_metric:.2f}; checkpoint {s['checkpoint']}")
    return 0


def cmd_eval(s: dict) -> int:
    if not os.path.exists(s["checkpoint"]):
        raise CliError(f"checkpoint not found: {s['checkpoint']}")
    model_cfg, params = load_checkpoint(s["checkpoint"])
    _, eval_bags = load_bags({**s, "task": model_cfg.task}, model_cfg.dim)
    metric = evaluate(eval_bags, params, model_cfg)
    record = {"metric": metric, "bags": len(eval_bags), "task": model_cfg.task}
    _write_outputs(s["out"], json.dumps(record, sort_keys=True) + "\n", {**record, "config": s})
    print(f"{'micro-F1' if model_cfg.task == 'multilabel' else 'accuracy'} {metric:.2f} "
          f"on {len(eval_bags)} bags")
    return 0


def cmd_verify(suite: str) -> int:
    checks = run_suite(suite)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 1 if failed else 0


def cmd_bench(args) -> int:
    if not args.n:
        raise CliError("usage: bench needs at least one --n value")
    rows = bench_mod.run_bench(args.n, args.landmarks, args.repetitions, exact_cap=args.exact_cap)
    sys.stdout.write(bench_mod.format_table(rows))
    if args.out:
        atomic_write(args.out, "".join(r.to_json() + "\n" for r in rows).encode())
    return 0


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.verb == "verify":
            return cmd_verify(args.suite)
        if args.verb == "bench":
            return cmd_bench(args)
        s = resolve_settings(args)
        return cmd_train(s) if args.verb == "train" else cmd_eval(s)
    except CliError as exc:
        print(f"laficmil: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # every other failure still gets a single line
        msg = str(exc).splitlines()[0] if str(exc) else ""
        print(f"laficmil: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
