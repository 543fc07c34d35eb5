"""On-disk formats: checkpoints, history, metrics reports, results ledger."""

from __future__ import annotations

import hashlib
import json
import zipfile
from pathlib import Path

import numpy as np

from .exceptions import CheckpointError
from .model import EmbeddingTable, ModelConfig
from .trainer import Checkpoint

CHECKPOINT_VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, (tuple, set)):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def dataset_hash(dataset) -> str:
    """Content hash of every split's pairs plus the behavior layout."""
    h = hashlib.sha256(canonical_json(dataset.metadata()).encode())
    for s in dataset.train + dataset.test:
        h.update(np.ascontiguousarray(s.pairs).tobytes())
    return h.hexdigest()[:16]


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": CHECKPOINT_VERSION,
        "model_config": ckpt.model_config.to_dict(),
        "enhancement_map": {str(s): r for s, r in ckpt.enhancement_map.items()},
        "behavior_names": list(ckpt.behavior_names),
        "target_behavior": ckpt.target_behavior,
        "num_users": ckpt.num_users,
        "num_items": ckpt.num_items,
        "epoch": ckpt.epoch,
        "metrics": ckpt.metrics,
        "dataset_hash": ckpt.dataset_hash,
        "step": ckpt.table.step,
    }
    with open(path, "wb") as fh:
        np.savez(
            fh,
            values=ckpt.table.values,
            first_moment=ckpt.table.first_moment,
            second_moment=ckpt.table.second_moment,
            meta=np.frombuffer(canonical_json(meta).encode(), dtype=np.uint8),
        )
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as z:
            values = z["values"]
            m1, m2 = z["first_moment"], z["second_moment"]
            meta = json.loads(z["meta"].tobytes().decode())
    except (OSError, ValueError, KeyError, zipfile.BadZipFile, EOFError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint {path} has unsupported version {meta.get('version')!r}")
    cfg = dict(meta["model_config"])
    if cfg.get("enhancement_map") is not None:
        cfg["enhancement_map"] = {int(s): int(r) for s, r in cfg["enhancement_map"].items()}
    n = meta["num_users"] + meta["num_items"]
    if values.shape[0] != n or values.shape != m1.shape or values.shape != m2.shape:
        raise CheckpointError(f"checkpoint {path}: table shape {values.shape} does not match {n} nodes")
    return Checkpoint(
        table=EmbeddingTable(values, m1, m2, int(meta["step"])),
        model_config=ModelConfig(**cfg),
        enhancement_map={int(s): int(r) for s, r in meta["enhancement_map"].items()},
        behavior_names=tuple(meta["behavior_names"]),
        target_behavior=int(meta["target_behavior"]),
        num_users=int(meta["num_users"]),
        num_items=int(meta["num_items"]),
        epoch=int(meta["epoch"]),
        metrics=meta["metrics"],
        dataset_hash=meta["dataset_hash"],
    )


def write_jsonl(records, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(canonical_json(rec) + "\n")
    return path


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_report(report, path) -> Path:
    path = Path(path)
    path.write_text(report.to_text(), encoding="utf-8")
    return path


def append_ledger(path, run_id, config, report) -> None:
    rec = {
        "run_id": run_id,
        "config_hash": config_hash(config),
        "behavior": report.behavior,
        f"recall@{report.k}": report.recall,
        f"ndcg@{report.k}": report.ndcg,
        "users_evaluated": report.users_evaluated,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(canonical_json(rec) + "\n")
