"""Command-line driver: ``mbgcf {prepare,synth,train,evaluate,grid}``.

Runs are described by an INI file; ``--set section.key=value`` overrides
any key. Exit codes: 0 success, 1 usage/config error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import storage
from .data import (
    SyntheticSpec,
    filter_cold_start,
    generate_synthetic,
    ingest,
    read_dataset,
    split,
    write_dataset,
)
from .estimator import MultiBehaviorGCF
from .exceptions import ConfigError, DataError, MBGCFError
from .metrics import EvalConfig, evaluate

log = logging.getLogger("mbgcf")

OUTPUT_ROOT_ENV = "MBGCF_OUTPUT_ROOT"

DEFAULTS = {
    "run": {"seed": "0", "output_dir": "runs", "run_id": "", "threads": "1"},
    "data": {
        "dataset_dir": "", "raw_path": "", "delimiter": "tab", "header": "false",
        "user_col": "0", "item_col": "1", "behavior_col": "2",
        "behaviors": "click,cart,purchase", "target": "purchase",
        "filter_threshold": "20", "split_ratio": "0.8", "split_source_behaviors": "true",
    },
    "model": {
        "embedding_dim": "64", "num_layers": "3", "aggregator": "mean", "enhancement": "",
        "base_embedding_mode": "shared", "stop_gradient": "true", "init_scale": "0.1",
        "behaviors": "all",
    },
    "train": {
        "batch_size": "2048", "learning_rate": "0.001", "l2": "0", "max_epochs": "100",
        "eval_every": "1", "early_stop_patience": "10", "validation_fraction": "0",
    },
    "eval": {"k": "20"},
}


class RunConfig:
    """Parsed INI configuration with typed accessors."""

    def __init__(self, parser: configparser.ConfigParser, path=None):
        self.parser = parser
        self.path = path

    @classmethod
    def load(cls, path=None, overrides=()):
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_dict(DEFAULTS)
        if path is not None:
            if not Path(path).is_file():
                raise ConfigError(f"config file {path} not found")
            try:
                cp.read(path, encoding="utf-8")
            except configparser.Error as exc:
                raise ConfigError(f"bad config {path}: {exc}") from exc
        for item in overrides:
            key, sep, value = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot:
                raise ConfigError(f"override {item!r} must look like section.key=value")
            if not cp.has_section(section):
                cp.add_section(section)
            cp.set(section, name, value.strip())
        return cls(cp, path)

    def get(self, section, key, fallback=None):
        return self.parser.get(section, key, fallback=fallback)

    def _typed(self, fn, section, key):
        try:
            return fn(section, key)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc

    def int(self, section, key):
        return self._typed(self.parser.getint, section, key)

    def float(self, section, key):
        return self._typed(self.parser.getfloat, section, key)

    def bool(self, section, key):
        return self._typed(self.parser.getboolean, section, key)

    def list(self, section, key):
        return [x.strip() for x in self.get(section, key, "").split(",") if x.strip()]

    def as_dict(self):
        return {s: dict(self.parser.items(s)) for s in self.parser.sections()}

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            self.parser.write(fh)

    @property
    def seed(self):
        return self.int("run", "seed")

    def output_root(self, flag=None):
        return Path(flag or os.environ.get(OUTPUT_ROOT_ENV) or self.get("run", "output_dir"))

    def synthetic_spec(self):
        if not self.parser.has_section("synthetic"):
            raise ConfigError("config has no [synthetic] section")
        s = "synthetic"
        names = self.list(s, "behavior_names") or None
        fractions = tuple(float(f) for f in self.list(s, "keep_fractions") or ["0.05", "0.005"])
        return SyntheticSpec(
            num_users=self.int(s, "num_users") if self.get(s, "num_users") else 200,
            num_items=self.int(s, "num_items") if self.get(s, "num_items") else 150,
            latent_dim=self.int(s, "latent_dim") if self.get(s, "latent_dim") else 8,
            keep_fractions=fractions,
            behavior_names=tuple(names) if names else None,
            seed=self.seed,
            split_ratio=self.float("data", "split_ratio"),
        )

    def enhancement_map(self, behavior_names):
        text = self.get("model", "enhancement", "")
        if not text.strip():
            return None
        out = {}
        for part in text.split(","):
            sparse, _, rich = part.partition(":")
            try:
                out[behavior_names.index(sparse.strip())] = behavior_names.index(rich.strip())
            except ValueError:
                raise ConfigError(f"[model] enhancement: unknown behavior in {part!r}") from None
        return out

    def estimator(self, behavior_names, **overrides):
        m, t = "model", "train"
        behaviors = self.get(m, "behaviors", "all").strip()
        if behaviors == "all":
            behaviors = None
        elif behaviors != "target":
            behaviors = self.list(m, "behaviors")
        params = dict(
            embedding_dim=self.int(m, "embedding_dim"),
            num_layers=self.int(m, "num_layers"),
            aggregator=self.get(m, "aggregator"),
            enhancement_map=self.enhancement_map(list(behavior_names)),
            base_embedding_mode=self.get(m, "base_embedding_mode"),
            stop_gradient=self.bool(m, "stop_gradient"),
            init_scale=self.float(m, "init_scale"),
            batch_size=self.int(t, "batch_size"),
            learning_rate=self.float(t, "learning_rate"),
            l2=self.float(t, "l2"),
            max_epochs=self.int(t, "max_epochs"),
            eval_every=self.int(t, "eval_every"),
            early_stop_patience=self.int(t, "early_stop_patience"),
            validation_fraction=self.float(t, "validation_fraction"),
            top_k=self.int("eval", "k"),
            behaviors=behaviors,
            seed=self.seed,
        )
        params.update(overrides)
        return MultiBehaviorGCF(**params)


def _delimiter(text):
    return {"tab": "\t", "\\t": "\t", "comma": ",", "space": " "}.get(text, text)


def _column(text):
    return int(text) if text.strip().lstrip("-").isdigit() else text.strip()


def print_stats(dataset, out=None):
    out = out or sys.stdout
    names = dataset.behavior_names
    header = ["# Users", "# Items"] + [f"# {n}" for n in names]
    totals = [len(tr) + len(te) for tr, te in zip(dataset.train, dataset.test)]
    row = [dataset.num_users, dataset.num_items] + totals
    print(" | ".join(header), file=out)
    print(" | ".join(f"{v:,}" for v in row), file=out)


def _load_data(cfg: RunConfig):
    """Dataset named by ``[data] dataset_dir`` or built from ``[synthetic]``."""
    ddir = cfg.get("data", "dataset_dir")
    has_synth = cfg.parser.has_section("synthetic")
    if ddir and has_synth:
        raise ConfigError("config names both [data] dataset_dir and a [synthetic] section; choose one")
    if ddir:
        ds = read_dataset(ddir)
    elif has_synth:
        ds = generate_synthetic(cfg.synthetic_spec())
    else:
        raise ConfigError("no data source: set [data] dataset_dir or add a [synthetic] section")
    return ds, storage.dataset_hash(ds)


def cmd_prepare(cfg: RunConfig, args):
    raw = cfg.get("data", "raw_path")
    if not raw:
        raise ConfigError("[data] raw_path is required for prepare")
    behaviors = cfg.list("data", "behaviors")
    events = ingest(
        raw, behaviors,
        user_col=_column(cfg.get("data", "user_col")),
        item_col=_column(cfg.get("data", "item_col")),
        behavior_col=_column(cfg.get("data", "behavior_col")),
        delimiter=_delimiter(cfg.get("data", "delimiter")),
        header=cfg.bool("data", "header"),
    )
    threshold = cfg.int("data", "filter_threshold")
    kept = filter_cold_start(events, threshold)
    ds = split(kept, cfg.float("data", "split_ratio"), cfg.seed,
               target_behavior=cfg.get("data", "target"),
               split_source_behaviors=cfg.bool("data", "split_source_behaviors"))
    out = Path(args.out or cfg.get("data", "dataset_dir") or cfg.output_root(args.output_dir) / "dataset")
    write_dataset(ds, out, extra={
        "seed": cfg.seed,
        "filter_threshold": threshold,
        "filter_mode": "single pass, total events over all behaviors",
        "raw_events": len(events),
        "events_after_filter": len(kept),
        "split_ratio": cfg.float("data", "split_ratio"),
        "split_source_behaviors": cfg.bool("data", "split_source_behaviors"),
    })
    print_stats(ds)
    print(f"dataset written to {out}")
    return 0


def cmd_synth(cfg: RunConfig, args):
    spec = cfg.synthetic_spec()
    ds = generate_synthetic(spec)
    sizes = [len(tr) + len(te) for tr, te in zip(ds.train, ds.test)]
    out = Path(args.out or cfg.get("data", "dataset_dir") or cfg.output_root(args.output_dir) / "synthetic")
    write_dataset(ds, out, extra={
        "seed": spec.seed,
        "synthetic": {
            "latent_dim": spec.latent_dim,
            "keep_fractions": list(spec.keep_fractions),
            "imbalance_ratio": sizes[0] / sizes[-1],
        },
        "split_ratio": spec.split_ratio,
    })
    print_stats(ds)
    print(f"imbalance ratio {ds.behavior_names[0]}:{ds.behavior_names[-1]} = {sizes[0] / sizes[-1]:.4g}")
    print(f"dataset written to {out}")
    return 0


def _run_id(cfg, args):
    return args.run_id or cfg.get("run", "run_id") or f"run-{storage.config_hash(cfg.as_dict())}"


def train_one(cfg: RunConfig, dataset, dhash, run_dir: Path, **overrides):
    est = cfg.estimator(dataset.behavior_names, **overrides)
    start = time.time()
    est.fit(dataset, dataset_hash=dhash)
    run_dir.mkdir(parents=True, exist_ok=True)
    storage.save_checkpoint(est.checkpoint_, run_dir / "checkpoint.npz")
    storage.write_jsonl(est.history_.records, run_dir / "history.jsonl")
    storage.write_jsonl(est.history_.timings, run_dir / "timing.jsonl")
    echo = cfg.as_dict()
    echo["estimator"] = {k: repr(v) for k, v in sorted(est.get_params().items())}
    report = evaluate(est.representations_, est.dataset_, EvalConfig(k=est.top_k),
                      seed=cfg.seed, run_config=echo)
    storage.write_report(report, run_dir / "report.txt")
    (run_dir / "run.json").write_text(json.dumps({
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(start)),
        "wall_time": time.time() - start,
        "dataset_hash": dhash,
        "best_epoch": est.history_.best_epoch,
        "stopped_early": est.history_.stopped_early,
        "enhancement_map": {est.dataset_.behavior_names[s]: est.dataset_.behavior_names[r]
                            for s, r in est.enhancement_map_.items()},
        "epoch_pacing": "largest behavior once per epoch; others resampled with replacement",
        "model_selection": "validation split" if est.validation_fraction > 0 else "target test split",
    }, indent=2) + "\n", encoding="utf-8")
    cfg.write(run_dir / "config.ini")
    return est, report


def cmd_train(cfg: RunConfig, args):
    dataset, dhash = _load_data(cfg)
    root = cfg.output_root(args.output_dir)
    run_id = _run_id(cfg, args)
    est, report = train_one(cfg, dataset, dhash, root / run_id)
    storage.append_ledger(root / "results.jsonl", run_id, cfg.as_dict(), report)
    print(f"{run_id}: recall@{report.k}={report.recall:.4f} ndcg@{report.k}={report.ndcg:.4f} "
          f"({report.users_evaluated} users, behavior {report.behavior})")
    return 0


def cmd_evaluate(cfg: RunConfig, args):
    ckpt = storage.load_checkpoint(args.checkpoint)
    ddir = args.dataset or cfg.get("data", "dataset_dir")
    if ddir:
        dataset = read_dataset(ddir)
        dhash = storage.dataset_hash(dataset)
    else:
        dataset, dhash = _load_data(cfg)
    if ckpt.dataset_hash and ckpt.dataset_hash != dhash:
        log.warning("dataset hash %s differs from checkpoint's %s", dhash, ckpt.dataset_hash)
    est = MultiBehaviorGCF.from_checkpoint(ckpt, dataset)
    k = args.k or cfg.int("eval", "k")
    report = evaluate(est.representations_, est.dataset_, EvalConfig(k=k), seed=ckpt.model_config.seed)
    if args.report:
        storage.write_report(report, args.report)
    print(report.to_text(), end="")
    return 0


GRID = (
    ("MF-BPR", dict(behaviors="target", num_layers=0, aggregator="none")),
    ("LightGCN", dict(behaviors="target", aggregator="none")),
    ("w/o SBE", dict(behaviors=None, aggregator="none")),
    ("Concat", dict(behaviors=None, aggregator="concat")),
    ("Mean", dict(behaviors=None, aggregator="mean")),
)


def cmd_grid(cfg: RunConfig, args):
    dataset, dhash = _load_data(cfg)
    root = cfg.output_root(args.output_dir)
    run_id = _run_id(cfg, args)
    rows = []
    for name, overrides in GRID:
        slug = name.lower().replace("/", "").replace(" ", "-")
        _, report = train_one(cfg, dataset, dhash, root / run_id / slug, **overrides)
        storage.append_ledger(root / "results.jsonl", f"{run_id}/{slug}", cfg.as_dict(), report)
        rows.append((name, report))
        print(f"{name}: recall@{report.k}={report.recall:.4f} ndcg@{report.k}={report.ndcg:.4f}", flush=True)
    k = rows[0][1].k
    lines = [f"variant\trecall@{k}\tndcg@{k}"] + [f"{n}\t{r.recall:.4f}\t{r.ndcg:.4f}" for n, r in rows]
    (root / run_id / "grid.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print()
    print("\n".join(line.replace("\t", " | ") for line in lines))
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "grid": cmd_grid,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="INI run configuration")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--seed", type=int, help="shortcut for --set run.seed=N")
    common.add_argument("--threads", type=int, help="worker threads for numeric libraries; 1 is bit-reproducible")
    common.add_argument("--output-dir", help=f"output root (else ${OUTPUT_ROOT_ENV}, else [run] output_dir)")
    common.add_argument("--run-id")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="mbgcf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("prepare", parents=[common], help="ingest, filter and split raw logs")
    p.add_argument("-o", "--out", help="dataset directory to write")
    p = sub.add_parser("synth", parents=[common], help="generate a synthetic funnel dataset")
    p.add_argument("-o", "--out", help="dataset directory to write")
    sub.add_parser("train", parents=[common], help="train, then evaluate the best checkpoint")
    p = sub.add_parser("evaluate", parents=[common], help="evaluate a saved checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("-k", type=int, help="cutoff override")
    p.add_argument("--report", help="write the report to this file")
    sub.add_parser("grid", parents=[common], help="baselines plus the three aggregation variants")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.threads is not None:
        overrides.append(f"run.threads={args.threads}")
    try:
        cfg = RunConfig.load(args.config, overrides)
        with threadpool_limits(limits=cfg.int("run", "threads")):
            return COMMANDS[args.command](cfg, args)
    except MBGCFError as exc:
        print(f"mbgcf: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"mbgcf: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
