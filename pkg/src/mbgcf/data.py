"""Event-log ingestion, cold-start filtering, splitting, negative sampling and
synthetic funnel datasets."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataError
from .graph import InteractionSet
from .rng import stream

log = logging.getLogger(__name__)

DEFAULT_BEHAVIORS = ("click", "cart", "purchase")


@dataclass
class RawEventLog:
    """Column-oriented ``(user_key, item_key, behavior)`` records.

    ``behaviors`` holds indices into ``behavior_names``.
    """

    behavior_names: tuple
    users: list = field(default_factory=list)
    items: list = field(default_factory=list)
    behaviors: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __len__(self):
        return len(self.users)

    @property
    def records(self):
        return [
            (u, i, self.behavior_names[b]) for u, i, b in zip(self.users, self.items, self.behaviors)
        ]

    @property
    def num_users(self):
        return len(set(self.users))

    @property
    def num_items(self):
        return len(set(self.items))

    def subset(self, mask):
        idx = np.flatnonzero(mask)
        return RawEventLog(
            self.behavior_names,
            [self.users[t] for t in idx],
            [self.items[t] for t in idx],
            self.behaviors[idx],
        )


def ingest(path, behavior_names=DEFAULT_BEHAVIORS, *, user_col=0, item_col=1, behavior_col=2,
           delimiter="\t", header=False) -> RawEventLog:
    """Read a delimiter-separated event file.

    Columns may be given as integer positions or, when ``header`` is true, as
    header names. Unknown behavior labels and short rows raise
    :class:`DataError` naming the line.
    """
    behavior_names = tuple(behavior_names)
    code = {name: k for k, name in enumerate(behavior_names)}
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    users, items, behaviors = [], [], []
    with fh:
        reader = csv.reader(fh, delimiter=delimiter)
        cols = [user_col, item_col, behavior_col]
        if header:
            names = next(reader, None)
            if names is not None:
                try:
                    cols = [names.index(c) if isinstance(c, str) else c for c in cols]
                except ValueError as exc:
                    raise DataError(f"{path}:1: missing column ({exc})") from exc
        if any(isinstance(c, str) for c in cols):
            raise ConfigError("named columns require header=True")
        need = max(cols) + 1
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            lineno = reader.line_num
            if len(row) < need:
                raise DataError(f"{path}:{lineno}: expected at least {need} columns, got {len(row)}")
            label = row[cols[2]].strip()
            if label not in code:
                raise DataError(f"{path}:{lineno}: unknown behavior {label!r}")
            users.append(row[cols[0]].strip())
            items.append(row[cols[1]].strip())
            behaviors.append(code[label])
    return RawEventLog(behavior_names, users, items, np.asarray(behaviors, dtype=np.int64))


def filter_cold_start(events: RawEventLog, threshold: int = 20) -> RawEventLog:
    """Drop every event touching a user or item with fewer than ``threshold``
    events in total (all behaviors, duplicates counted).

    One pass only: survivors may fall below the threshold afterwards.
    """
    if len(events) == 0:
        return events
    u_keys, u_inv, u_cnt = np.unique(np.asarray(events.users, dtype=object).astype(str),
                                     return_inverse=True, return_counts=True)
    i_keys, i_inv, i_cnt = np.unique(np.asarray(events.items, dtype=object).astype(str),
                                     return_inverse=True, return_counts=True)
    keep = (u_cnt[u_inv] >= threshold) & (i_cnt[i_inv] >= threshold)
    return events.subset(keep)


@dataclass(frozen=True)
class Dataset:
    """Per-behavior train/test interaction sets on a shared index space."""

    behavior_names: tuple
    target_behavior: int
    num_users: int
    num_items: int
    train: tuple
    test: tuple
    user_ids: np.ndarray
    item_ids: np.ndarray

    def __post_init__(self):
        K = len(self.behavior_names)
        if not 0 <= self.target_behavior < K:
            raise ConfigError(f"target behavior {self.target_behavior} not in [0, {K})")
        if len(self.train) != K or len(self.test) != K:
            raise DataError("need one train and one test set per behavior")
        if len(self.user_ids) != self.num_users or len(self.item_ids) != self.num_items:
            raise DataError("id maps do not match user/item counts")
        for tr, te in zip(self.train, self.test):
            if (tr.num_users, tr.num_items) != (self.num_users, self.num_items) or \
                    (te.num_users, te.num_items) != (self.num_users, self.num_items):
                raise DataError("interaction set shape does not match dataset")

    @property
    def num_behaviors(self):
        return len(self.behavior_names)

    @property
    def target_name(self):
        return self.behavior_names[self.target_behavior]

    def behavior_index(self, name_or_index):
        if isinstance(name_or_index, (int, np.integer)):
            return int(name_or_index)
        try:
            return self.behavior_names.index(name_or_index)
        except ValueError:
            raise ConfigError(f"unknown behavior {name_or_index!r}; have {self.behavior_names}") from None

    def select(self, behaviors, target=None) -> "Dataset":
        """Dataset restricted to ``behaviors`` (names or indices), re-indexed
        in the given order. The target defaults to the current target."""
        idx = [self.behavior_index(b) for b in behaviors]
        target = self.target_behavior if target is None else self.behavior_index(target)
        if target not in idx:
            raise ConfigError(f"target behavior {self.behavior_names[target]!r} not selected")

        def relabel(sets):
            return tuple(
                InteractionSet(new, s.num_users, s.num_items, s.pairs)
                for new, s in enumerate(sets[k] for k in idx)
            )

        return Dataset(
            tuple(self.behavior_names[k] for k in idx), idx.index(target),
            self.num_users, self.num_items, relabel(self.train), relabel(self.test),
            self.user_ids, self.item_ids,
        )

    def retarget(self, target) -> "Dataset":
        return self.select(range(self.num_behaviors), target=target)

    def richest_behavior(self):
        return int(np.argmax([len(s) for s in self.train]))

    def metadata(self):
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "behavior_names": list(self.behavior_names),
            "target_behavior": self.behavior_names[self.target_behavior],
            "train_sizes": {n: len(s) for n, s in zip(self.behavior_names, self.train)},
            "test_sizes": {n: len(s) for n, s in zip(self.behavior_names, self.test)},
        }


def _ceil_fraction(ratio, n):
    # round first so 0.7 * 10 does not ceil to 8
    return min(n, math.ceil(round(ratio * n, 9)))


def _split_pairs(sets, ratio, rng, keep_all=()):
    train, test = [], []
    for k, full in enumerate(sets):
        if len(full) == 0:
            log.warning("behavior %d has no interactions; train and test are empty", k)
        n_train = len(full) if k in keep_all else _ceil_fraction(ratio, len(full))
        perm = rng.permutation(len(full))
        train.append(InteractionSet.from_pairs(k, full.num_users, full.num_items, full.pairs[perm[:n_train]]))
        test.append(InteractionSet.from_pairs(k, full.num_users, full.num_items, full.pairs[perm[n_train:]]))
    return tuple(train), tuple(test)


def split(events: RawEventLog, ratio: float = 0.8, seed: int = 0, *, target_behavior=None,
          split_source_behaviors: bool = True) -> Dataset:
    """Per-behavior random split of deduplicated pairs.

    Train receives ``ceil(ratio * n)`` pairs of each behavior. With
    ``split_source_behaviors=False`` every non-target behavior goes to train
    whole.
    """
    if not 0.0 < ratio <= 1.0:
        raise ConfigError(f"split ratio must be in (0, 1], got {ratio}")
    if len(events) == 0:
        raise DataError("cannot split an empty event log")
    K = len(events.behavior_names)
    target = K - 1 if target_behavior is None else (
        events.behavior_names.index(target_behavior) if isinstance(target_behavior, str) else target_behavior
    )
    user_ids, u_idx = np.unique(np.asarray(events.users, dtype=str), return_inverse=True)
    item_ids, i_idx = np.unique(np.asarray(events.items, dtype=str), return_inverse=True)
    M, N = len(user_ids), len(item_ids)
    full = [
        InteractionSet.from_pairs(k, M, N, np.stack([u_idx, i_idx], 1)[events.behaviors == k])
        for k in range(K)
    ]
    keep_all = () if split_source_behaviors else tuple(k for k in range(K) if k != target)
    train, test = _split_pairs(full, ratio, stream(seed, "split"), keep_all)
    return Dataset(tuple(events.behavior_names), target, M, N, train, test, user_ids, item_ids)


def sample_negative(train_k: InteractionSet, user: int, rng: np.random.Generator) -> int:
    """One item drawn uniformly from those ``user`` has not interacted with."""
    pos = train_k.positives_of(user)
    if len(pos) >= train_k.num_items:
        raise DataError(f"user {user} is positive on all {train_k.num_items} items in behavior {train_k.behavior_id}")
    while True:
        j = int(rng.integers(train_k.num_items))
        if not train_k.contains([user], [j])[0]:
            return j


def sample_negatives(train_k: InteractionSet, users, rng: np.random.Generator) -> np.ndarray:
    """Vectorized :func:`sample_negative`: one negative per entry of ``users``.

    Rejected draws are redrawn until none hit a training positive, so each
    result is uniform over the user's non-interacted items.
    """
    users = np.asarray(users, dtype=np.int64)
    counts = train_k.user_counts()
    full = counts[users] >= train_k.num_items
    if full.any():
        raise DataError(
            f"user {users[full][0]} is positive on all {train_k.num_items} items in behavior {train_k.behavior_id}"
        )
    neg = rng.integers(train_k.num_items, size=len(users))
    todo = np.flatnonzero(train_k.contains(users, neg))
    while len(todo):
        neg[todo] = rng.integers(train_k.num_items, size=len(todo))
        todo = todo[train_k.contains(users[todo], neg[todo])]
    return neg


@dataclass(frozen=True)
class SyntheticSpec:
    """Low-rank funnel dataset: behavior k keeps the top ``keep_fractions[k]``
    share of all user-item cells ranked by a latent dot product."""

    num_users: int = 200
    num_items: int = 150
    latent_dim: int = 8
    keep_fractions: tuple = (0.05, 0.005)
    behavior_names: tuple = None
    seed: int = 0
    split_ratio: float = 0.8

    def __post_init__(self):
        fr = tuple(float(f) for f in self.keep_fractions)
        object.__setattr__(self, "keep_fractions", fr)
        if self.behavior_names is None:
            names = DEFAULT_BEHAVIORS if len(fr) == 3 else tuple(f"b{k}" for k in range(len(fr)))
            object.__setattr__(self, "behavior_names", names)
        else:
            object.__setattr__(self, "behavior_names", tuple(self.behavior_names))
        if len(self.behavior_names) != len(fr) or not fr:
            raise ConfigError("need one behavior name per keep fraction")
        if any(not 0.0 < f <= 1.0 for f in fr):
            raise ConfigError(f"keep fractions must lie in (0, 1], got {fr}")
        if any(b > a for a, b in zip(fr, fr[1:])):
            raise ConfigError(f"keep fractions must be non-increasing, got {fr}")
        if self.num_users < 1 or self.num_items < 1 or self.latent_dim < 1:
            raise ConfigError("num_users, num_items and latent_dim must be positive")

    def sizes(self):
        cells = self.num_users * self.num_items
        return tuple(int(round(f * cells)) for f in self.keep_fractions)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    M, N = spec.num_users, spec.num_items
    sizes = spec.sizes()
    if min(sizes) == 0:
        raise ConfigError(f"keep fractions {spec.keep_fractions} give an empty behavior on {M}x{N} cells")
    rng = stream(spec.seed, "synthetic")
    zu = rng.standard_normal((M, spec.latent_dim))
    zi = rng.standard_normal((N, spec.latent_dim))
    affinity = np.einsum("uf,if->ui", zu, zi).ravel()
    order = np.argsort(-affinity, kind="stable")
    full = [
        InteractionSet.from_pairs(k, M, N, np.stack([order[:t] // N, order[:t] % N], 1))
        for k, t in enumerate(sizes)
    ]
    train, test = _split_pairs(full, spec.split_ratio, stream(spec.seed, "split"))
    K = len(sizes)
    return Dataset(
        spec.behavior_names, K - 1, M, N, train, test,
        np.arange(M).astype(str), np.arange(N).astype(str),
    )


# canonical dataset directory

def _write_pairs(path, s: InteractionSet):
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in s.pairs:
            fh.write(f"{u}\t{i}\n")


def _read_pairs(path, k, M, N):
    try:
        arr = np.loadtxt(path, dtype=np.int64, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read pair file {path}: {exc}") from exc
    return InteractionSet.from_pairs(k, M, N, arr.reshape(-1, 2))


def write_dataset(dataset: Dataset, directory, extra=None) -> Path:
    """Write one pair file per behavior and split plus ``metadata.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, tr, te in zip(dataset.behavior_names, dataset.train, dataset.test):
        _write_pairs(directory / f"{name}.train.txt", tr)
        _write_pairs(directory / f"{name}.test.txt", te)
    (directory / "user_ids.txt").write_text("".join(f"{k}\n" for k in dataset.user_ids), encoding="utf-8")
    (directory / "item_ids.txt").write_text("".join(f"{k}\n" for k in dataset.item_ids), encoding="utf-8")
    meta = dataset.metadata()
    meta.update(extra or {})
    (directory / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return directory


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    try:
        meta = json.loads((directory / "metadata.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read dataset metadata in {directory}: {exc}") from exc
    M, N = meta["num_users"], meta["num_items"]
    names = tuple(meta["behavior_names"])
    train = tuple(_read_pairs(directory / f"{n}.train.txt", k, M, N) for k, n in enumerate(names))
    test = tuple(_read_pairs(directory / f"{n}.test.txt", k, M, N) for k, n in enumerate(names))

    def ids(fname, n):
        p = directory / fname
        if not p.exists():
            return np.arange(n).astype(str)
        return np.asarray(p.read_text(encoding="utf-8").splitlines(), dtype=str)

    return Dataset(names, names.index(meta["target_behavior"]), M, N, train, test,
                   ids("user_ids.txt", M), ids("item_ids.txt", N))


def dataset_metadata(directory):
    return json.loads((Path(directory) / "metadata.json").read_text(encoding="utf-8"))
