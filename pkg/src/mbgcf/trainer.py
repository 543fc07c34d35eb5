"""Multi-task BPR training with closed-form gradients through propagation.

Every representation is linear in the base table: ``E^k = P^k E`` with
``P^k = mean_l (A^k)^l`` and ``A^k`` symmetric, so the pullback of a
gradient ``G`` on ``E^k`` is ``P^k G``, computed with the same sparse
products as the forward pass.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset, sample_negatives
from .exceptions import ConfigError, NumericalError
from .graph import InteractionSet
from .model import (
    EmbeddingTable,
    ModelConfig,
    build_graphs,
    forward_graphs,
    init_embeddings,
    layer_average,
    propagate,
    resolve_enhancement_map,
)
from .rng import stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 2048
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2: float = 0.0
    max_epochs: int = 100
    eval_every: int = 1
    early_stop_patience: int = 10
    top_k: int = 20
    validation_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")
        if self.max_epochs < 0 or self.eval_every < 1 or self.early_stop_patience < 1:
            raise ConfigError("max_epochs >= 0, eval_every >= 1 and early_stop_patience >= 1 required")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class TripletBatch:
    behavior_id: int
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self):
        return len(self.users)


def bpr_pair_loss(score_pos, score_neg):
    """``-ln sigmoid(pos - neg)`` and its derivative w.r.t. the difference.

    Both branches only ever exponentiate non-positive numbers.
    """
    diff = np.asarray(score_pos, dtype=np.float64) - np.asarray(score_neg, dtype=np.float64)
    neg_abs = -np.abs(diff)
    loss = np.log1p(np.exp(neg_abs)) + np.maximum(-diff, 0.0)
    e = np.exp(neg_abs)
    # sigmoid(diff) - 1 == -sigmoid(-diff)
    dloss = np.where(diff >= 0, -e / (1.0 + e), -1.0 / (1.0 + e))
    if np.ndim(loss) == 0:
        return float(loss), float(dloss)
    return loss, dloss


def scoring_gradient(batch: TripletBatch, scoring, num_users):
    """Mean BPR loss of ``batch`` and its gradient on the scoring matrix rows."""
    u = batch.users
    i = num_users + batch.pos_items
    j = num_users + batch.neg_items
    eu, ei, ej = scoring[u], scoring[i], scoring[j]
    loss, g = bpr_pair_loss(np.sum(eu * ei, axis=1), np.sum(eu * ej, axis=1))
    g = g / len(batch)
    grad = np.zeros_like(scoring)
    np.add.at(grad, u, g[:, None] * (ei - ej))
    np.add.at(grad, i, g[:, None] * eu)
    np.add.at(grad, j, -g[:, None] * eu)
    return float(np.mean(loss)), grad


def route_to_branches(grad, behavior, enhancement_map, config: ModelConfig) -> dict:
    """Split a scoring-matrix gradient onto the averaged branch matrices.

    With ``stop_gradient`` the rich source receives nothing from a sparse
    behavior's loss.
    """
    if behavior not in enhancement_map:
        return {behavior: grad}
    rich = enhancement_map[behavior]
    d = config.embedding_dim
    if config.aggregator == "mean":
        sparse_part = rich_part = grad / 2
    elif config.aggregator == "concat":
        sparse_part, rich_part = grad[:, :d], grad[:, d:]
    else:
        return {behavior: grad}
    if config.stop_gradient:
        return {behavior: sparse_part}
    return {behavior: sparse_part, rich: rich_part}


def batch_gradients(batch: TripletBatch, reps, config: ModelConfig, enhancement_map, num_users):
    """Loss of one behavior's batch and its gradient per branch matrix."""
    loss, grad = scoring_gradient(batch, reps[batch.behavior_id].scoring, num_users)
    return loss, route_to_branches(grad, batch.behavior_id, enhancement_map, config)


def backprop_to_base(branch_grad, graph, num_layers):
    """Pull a gradient on the averaged representation back to the base."""
    return layer_average(propagate(graph, branch_grad, num_layers))


def base_gradient(branch_grads: dict, graphs, config: ModelConfig, width):
    """Accumulate branch pullbacks into a table-shaped gradient, in branch order."""
    n = graphs[0].num_nodes
    out = np.zeros((n, width))
    d = config.embedding_dim
    for b in sorted(branch_grads):
        pulled = backprop_to_base(branch_grads[b], graphs[b], config.num_layers)
        if config.base_embedding_mode == "shared":
            out += pulled
        else:
            out[:, b * d:(b + 1) * d] += pulled
    return out


def step_gradients(batches, reps, graphs, config: ModelConfig, enhancement_map, num_users, width):
    """Per-behavior losses and per-behavior base gradients for one step."""
    losses, grads = {}, {}
    for batch in batches:
        loss, branches = batch_gradients(batch, reps, config, enhancement_map, num_users)
        losses[batch.behavior_id] = loss
        grads[batch.behavior_id] = base_gradient(branches, graphs, config, width)
    return losses, grads


def adam_step(table: EmbeddingTable, gradient, config: TrainConfig, context=""):
    """One bias-corrected Adam update of the whole table, in place."""
    if config.l2 > 0:
        gradient = gradient + config.l2 * table.values
    if not np.all(np.isfinite(gradient)):
        raise NumericalError(f"non-finite gradient at step {table.step + 1}{context}")
    table.step += 1
    t = table.step
    b1, b2 = config.beta1, config.beta2
    table.first_moment = b1 * table.first_moment + (1 - b1) * gradient
    table.second_moment = b2 * table.second_moment + (1 - b2) * gradient * gradient
    m_hat = table.first_moment / (1 - b1 ** t)
    v_hat = table.second_moment / (1 - b2 ** t)
    table.values = table.values - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return table


class TrainingState:
    """Graphs, enhancement routing and the table for one training run."""

    def __init__(self, dataset: Dataset, model_config: ModelConfig, table=None):
        self.dataset = dataset
        self.config = model_config
        self.graphs = build_graphs(dataset)
        self.sizes = [len(s) for s in dataset.train]
        self.enhancement_map = resolve_enhancement_map(model_config, self.sizes)
        self.table = table if table is not None else init_embeddings(
            model_config, dataset.num_users, dataset.num_items, dataset.num_behaviors
        )

    def forward(self, values=None):
        values = self.table.values if values is None else values
        return forward_graphs(self.graphs, values, self.config, self.enhancement_map)

    def step(self, batches, train_config: TrainConfig):
        """Forward, per-behavior gradients summed in behavior order, one Adam step."""
        reps = self.forward()
        losses, grads = step_gradients(
            batches, reps, self.graphs, self.config, self.enhancement_map,
            self.dataset.num_users, self.table.values.shape[1],
        )
        total = np.zeros_like(self.table.values)
        for k in sorted(grads):
            total += grads[k]
        names = ", ".join(self.dataset.behavior_names[k] for k in sorted(grads))
        adam_step(self.table, total, train_config, context=f" (behaviors: {names})")
        return losses


def epoch_batches(dataset: Dataset, batch_size: int, rng: np.random.Generator):
    """Yield one list of :class:`TripletBatch` per step of an epoch.

    The behavior with the most training pairs sets the pace and is visited
    once per epoch in shuffled order; every other behavior draws the same
    number of positives with replacement.
    """
    sizes = [len(s) for s in dataset.train]
    active = [k for k, n in enumerate(sizes) if n > 0]
    if not active:
        return
    pace = int(np.argmax(sizes))
    n_steps = math.ceil(sizes[pace] / batch_size)
    perm = rng.permutation(sizes[pace])
    for step in range(n_steps):
        batches = []
        for k in active:
            s: InteractionSet = dataset.train[k]
            if k == pace:
                idx = perm[step * batch_size:(step + 1) * batch_size]
            else:
                idx = rng.integers(sizes[k], size=min(batch_size, sizes[pace] - step * batch_size))
            users = s.users[idx]
            negs = sample_negatives(s, users, rng)
            batches.append(TripletBatch(k, users, s.items[idx], negs))
        yield batches


def train_epoch(state: TrainingState, train_config: TrainConfig, rng) -> dict:
    """Run one epoch; returns mean batch loss per behavior index."""
    for k, n in enumerate(state.sizes):
        if n == 0:
            log.warning("behavior %s has no training pairs; skipped", state.dataset.behavior_names[k])
    totals, counts = {}, {}
    for batches in epoch_batches(state.dataset, train_config.batch_size, rng):
        for k, loss in state.step(batches, train_config).items():
            totals[k] = totals.get(k, 0.0) + loss
            counts[k] = counts.get(k, 0) + 1
    return {k: totals[k] / counts[k] for k in sorted(totals)}


@dataclass
class Checkpoint:
    table: EmbeddingTable
    model_config: ModelConfig
    enhancement_map: dict
    behavior_names: tuple
    target_behavior: int
    num_users: int
    num_items: int
    epoch: int = 0
    metrics: dict = field(default_factory=dict)
    dataset_hash: str = ""


@dataclass
class History:
    records: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = None
    stopped_early: bool = False

    def __len__(self):
        return len(self.records)


def carve_validation(dataset: Dataset, fraction: float, seed: int):
    """Move ``fraction`` of the target's training pairs into a held-out set.

    Returns the reduced dataset and a dataset whose target test split is the
    held-out part.
    """
    t = dataset.target_behavior
    tr = dataset.train[t]
    rng = stream(seed, "validation")
    perm = rng.permutation(len(tr))
    n_val = int(round(fraction * len(tr)))
    keep = InteractionSet.from_pairs(t, tr.num_users, tr.num_items, tr.pairs[perm[n_val:]])
    val = InteractionSet.from_pairs(t, tr.num_users, tr.num_items, tr.pairs[perm[:n_val]])
    train = tuple(keep if k == t else s for k, s in enumerate(dataset.train))
    reduced = Dataset(dataset.behavior_names, t, dataset.num_users, dataset.num_items,
                      train, dataset.test, dataset.user_ids, dataset.item_ids)
    test = tuple(val if k == t else s for k, s in enumerate(dataset.test))
    held = Dataset(dataset.behavior_names, t, dataset.num_users, dataset.num_items,
                   train, test, dataset.user_ids, dataset.item_ids)
    return reduced, held


def fit(dataset: Dataset, model_config: ModelConfig, train_config: TrainConfig, *,
        evaluate_fn=None, on_epoch=None, dataset_hash=""):
    """Train and keep the best checkpoint by target Recall@K.

    ``evaluate_fn(reps, dataset) -> MetricsReport`` defaults to
    :func:`mbgcf.metrics.evaluate` with ``top_k``. Without a validation
    fraction, model selection reads the target test split.
    """
    from .metrics import EvalConfig, evaluate

    if evaluate_fn is None:
        def evaluate_fn(reps, ds):
            return evaluate(reps, ds, EvalConfig(k=train_config.top_k))

    monitor = dataset
    if train_config.validation_fraction > 0:
        dataset, monitor = carve_validation(dataset, train_config.validation_fraction, train_config.seed)

    state = TrainingState(dataset, model_config)
    rng = stream(train_config.seed, "sampling")
    history = History()

    def snapshot(epoch, metrics=None):
        return Checkpoint(
            state.table.copy(), model_config, dict(state.enhancement_map), dataset.behavior_names,
            dataset.target_behavior, dataset.num_users, dataset.num_items, epoch, dict(metrics or {}),
            dataset_hash,
        )

    best = snapshot(0)
    bad_evals = 0
    for epoch in range(1, train_config.max_epochs + 1):
        start = time.perf_counter()
        losses = train_epoch(state, train_config, rng)
        record = {"epoch": epoch, "loss": {dataset.behavior_names[k]: v for k, v in losses.items()}}
        if epoch % train_config.eval_every == 0:
            report = evaluate_fn(state.forward(), monitor)
            metrics = {f"recall@{report.k}": report.recall, f"ndcg@{report.k}": report.ndcg}
            record["metrics"] = metrics
            if history.best_metric is None or report.recall > history.best_metric:
                history.best_metric = report.recall
                history.best_epoch = epoch
                best = snapshot(epoch, metrics)
                bad_evals = 0
            else:
                bad_evals += 1
        history.records.append(record)
        history.timings.append({"epoch": epoch, "wall_time": time.perf_counter() - start})
        if on_epoch is not None:
            on_epoch(record)
        if bad_evals >= train_config.early_stop_patience:
            history.stopped_early = True
            break
    if history.best_metric is None and history.records:
        best = snapshot(len(history.records))
    return best, history
