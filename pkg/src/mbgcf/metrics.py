"""Full-ranking top-K evaluation of the target behavior."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ConfigError, DataError

PROTOCOL = "full-ranking; candidates = all items minus target-behavior training positives"


@dataclass(frozen=True)
class EvalConfig:
    k: int = 20
    # None evaluates the dataset's own target behavior
    target_behavior: int = None
    user_batch: int = 1024

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")


@dataclass
class MetricsReport:
    recall: float
    ndcg: float
    k: int
    users_evaluated: int
    users_short_of_candidates: int
    behavior: str
    protocol: str = PROTOCOL
    config: dict = field(default_factory=dict)
    seed: int = None

    def as_dict(self):
        return asdict(self)

    def to_text(self):
        flat = {
            f"recall@{self.k}": repr(self.recall),
            f"ndcg@{self.k}": repr(self.ndcg),
            "k": self.k,
            "users_evaluated": self.users_evaluated,
            "users_short_of_candidates": self.users_short_of_candidates,
            "behavior": self.behavior,
            "protocol": self.protocol,
            "seed": self.seed,
        }
        for section, values in sorted(self.config.items()):
            if isinstance(values, dict):
                for key, v in sorted(values.items()):
                    flat[f"{section}.{key}"] = v
            else:
                flat[section] = values
        return "".join(f"{key} = {value}\n" for key, value in flat.items())


def recall_at_k(topk, test_items) -> float:
    test_items = set(int(t) for t in test_items)
    if not test_items:
        raise DataError("recall@k needs at least one test item")
    hits = sum(1 for i in topk if int(i) in test_items)
    return hits / len(test_items)


def ndcg_at_k(topk, test_items, k=None) -> float:
    """Binary-relevance NDCG; ``k`` defaults to ``len(topk)``."""
    test_items = set(int(t) for t in test_items)
    if not test_items:
        raise DataError("ndcg@k needs at least one test item")
    k = len(topk) if k is None else k
    dcg = sum(1.0 / np.log2(p + 2) for p, i in enumerate(topk[:k]) if int(i) in test_items)
    idcg = sum(1.0 / np.log2(p + 2) for p in range(min(k, len(test_items))))
    return float(dcg / idcg)


def _top_items(row, k):
    """Indices of the ``k`` largest entries, ties by ascending index."""
    n = len(row)
    if k >= n:
        idx = np.arange(n)
    else:
        kth = np.partition(row, n - k)[n - k]
        idx = np.flatnonzero(row >= kth)
    order = np.lexsort((idx, -row[idx]))
    return idx[order[:k]]


def rank_topk(user, reps, dataset, config: EvalConfig = EvalConfig()):
    """Top-``k`` unmasked items for ``user``; shorter when candidates run out."""
    k_beh = dataset.target_behavior if config.target_behavior is None else config.target_behavior
    S = reps[k_beh].scoring
    M = dataset.num_users
    scores = np.einsum("ud,id->ui", S[[user]], S[M:])[0]
    return _rank_row(scores, dataset.train[k_beh].positives_of(user), config.k)


def _rank_row(scores, masked, k):
    scores = np.array(scores, dtype=np.float64)
    scores[masked] = -np.inf
    n_cand = len(scores) - len(masked)
    return _top_items(scores, min(k, n_cand))


def evaluate(reps, dataset, config: EvalConfig = EvalConfig(), *, seed=None, run_config=None) -> MetricsReport:
    """Mean Recall@K and NDCG@K over users with target test items."""
    k_beh = dataset.target_behavior if config.target_behavior is None else config.target_behavior
    train, test = dataset.train[k_beh], dataset.test[k_beh]
    users = np.unique(test.users)
    if len(users) == 0:
        raise DataError(f"no user has test items in behavior {dataset.behavior_names[k_beh]!r}")
    S = reps[k_beh].scoring
    M = dataset.num_users
    user_part, item_part = S[:M], S[M:]
    recalls, ndcgs, short = [], [], 0
    for lo in range(0, len(users), config.user_batch):
        block = users[lo:lo + config.user_batch]
        scores = np.einsum("ud,id->ui", user_part[block], item_part)
        for row, u in zip(scores, block):
            masked = train.positives_of(u)
            if dataset.num_items - len(masked) < config.k:
                short += 1
            top = _rank_row(row, masked, config.k)
            truth = test.positives_of(u)
            recalls.append(recall_at_k(top, truth))
            ndcgs.append(ndcg_at_k(top, truth, config.k))
    return MetricsReport(
        recall=float(np.mean(recalls)),
        ndcg=float(np.mean(ndcgs)),
        k=config.k,
        users_evaluated=len(users),
        users_short_of_candidates=short,
        behavior=dataset.behavior_names[k_beh],
        config=dict(run_config or {}),
        seed=seed,
    )
