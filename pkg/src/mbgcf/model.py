"""Forward pass: per-behavior LightGCN propagation over a base embedding
table, layer averaging, sparse-behavior enhancement and dot-product scores."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ConfigError, ShapeError
from .graph import NormalizedGraph, build_graph, spmm
from .rng import stream

AGGREGATORS = ("none", "mean", "concat")
BASE_MODES = ("shared", "per_behavior")


@dataclass(frozen=True)
class ModelConfig:
    embedding_dim: int = 64
    num_layers: int = 3
    aggregator: str = "mean"
    # sparse behavior -> rich source; None means "richest enhances all others"
    enhancement_map: dict = None
    base_embedding_mode: str = "shared"
    stop_gradient: bool = True
    init_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.embedding_dim < 1:
            raise ConfigError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        if self.num_layers < 0:
            raise ConfigError(f"num_layers must be >= 0, got {self.num_layers}")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"aggregator must be one of {AGGREGATORS}, got {self.aggregator!r}")
        if self.base_embedding_mode not in BASE_MODES:
            raise ConfigError(f"base_embedding_mode must be one of {BASE_MODES}, got {self.base_embedding_mode!r}")
        if not self.init_scale > 0:
            raise ConfigError(f"init_scale must be > 0, got {self.init_scale}")
        if self.enhancement_map is not None:
            check_enhancement_map(self.enhancement_map)

    def to_dict(self):
        return asdict(self)


def check_enhancement_map(emap, num_behaviors=None):
    for s, r in emap.items():
        if s == r:
            raise ConfigError(f"behavior {s} cannot enhance itself")
        if r in emap:
            raise ConfigError(f"rich source {r} is itself enhanced")
        if num_behaviors is not None and not (0 <= s < num_behaviors and 0 <= r < num_behaviors):
            raise ConfigError(f"enhancement pair {s}->{r} outside [0, {num_behaviors})")


def resolve_enhancement_map(config: ModelConfig, train_sizes) -> dict:
    """Sparse -> rich map actually used; empty when aggregation is off."""
    K = len(train_sizes)
    if config.aggregator == "none" or K < 2:
        return {}
    if config.enhancement_map is not None:
        emap = {int(s): int(r) for s, r in config.enhancement_map.items()}
        check_enhancement_map(emap, K)
        return emap
    rich = int(np.argmax(train_sizes))
    return {k: rich for k in range(K) if k != rich}


@dataclass
class EmbeddingTable:
    """Trainable base embeddings plus Adam moment state.

    In ``per_behavior`` mode the columns hold one ``d``-wide block per
    behavior.
    """

    values: np.ndarray
    first_moment: np.ndarray = None
    second_moment: np.ndarray = None
    step: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.first_moment is None:
            self.first_moment = np.zeros_like(self.values)
        if self.second_moment is None:
            self.second_moment = np.zeros_like(self.values)
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("embedding table contains non-finite values")

    def copy(self):
        return EmbeddingTable(self.values.copy(), self.first_moment.copy(), self.second_moment.copy(), self.step)


def init_embeddings(config: ModelConfig, num_users: int, num_items: int, num_behaviors: int = 1) -> EmbeddingTable:
    width = config.embedding_dim * (num_behaviors if config.base_embedding_mode == "per_behavior" else 1)
    rng = stream(config.seed, "init")
    return EmbeddingTable(config.init_scale * rng.standard_normal((num_users + num_items, width)))


def base_block(values, config: ModelConfig, behavior: int):
    if config.base_embedding_mode == "shared":
        return values
    d = config.embedding_dim
    return values[:, behavior * d:(behavior + 1) * d]


@dataclass
class BehaviorRepresentation:
    behavior_id: int
    layer_outputs: list
    averaged: np.ndarray
    enhanced: np.ndarray = None
    rich_source: int = None

    @property
    def scoring(self):
        """Matrix whose rows are scored: the enhanced one when present."""
        return self.averaged if self.enhanced is None else self.enhanced


def propagate(graph: NormalizedGraph, base, num_layers: int) -> list:
    """``[E, A E, A^2 E, ...]`` with ``num_layers + 1`` entries."""
    base = np.asarray(base, dtype=np.float64)
    if base.ndim != 2 or base.shape[0] != graph.num_nodes:
        raise ShapeError(f"base must have {graph.num_nodes} rows, got shape {base.shape}")
    layers = [base]
    for _ in range(num_layers):
        layers.append(spmm(graph, layers[-1]))
    return layers


def layer_average(layers) -> np.ndarray:
    """Uniform mean, summed in list order then divided by the count."""
    if not layers:
        raise ShapeError("layer_average needs at least one layer")
    acc = np.array(layers[0], dtype=np.float64)
    for x in layers[1:]:
        if x.shape != acc.shape:
            raise ShapeError(f"layer shape {x.shape} differs from {acc.shape}")
        acc += x
    return acc / len(layers)


def enhance(sparse_rep, rich_rep, aggregator: str) -> np.ndarray:
    if sparse_rep.shape != rich_rep.shape:
        raise ShapeError(f"cannot aggregate {sparse_rep.shape} with {rich_rep.shape}")
    if aggregator == "mean":
        return (sparse_rep + rich_rep) / 2
    if aggregator == "concat":
        return np.concatenate([sparse_rep, rich_rep], axis=1)
    if aggregator == "none":
        return sparse_rep
    raise ConfigError(f"unknown aggregator {aggregator!r}")


def score(user_row, item_row) -> float:
    user_row = np.asarray(user_row, dtype=np.float64)
    item_row = np.asarray(item_row, dtype=np.float64)
    if user_row.shape != item_row.shape:
        raise ShapeError(f"width mismatch: {user_row.shape} vs {item_row.shape}")
    return float(np.dot(user_row, item_row))


def build_graphs(dataset) -> list:
    return [build_graph(s) for s in dataset.train]


def forward(dataset, table: EmbeddingTable, config: ModelConfig, graphs=None, enhancement_map=None) -> dict:
    """Representations of every behavior, keyed by behavior index.

    Graphs come from the training split only.
    """
    graphs = build_graphs(dataset) if graphs is None else graphs
    if enhancement_map is None:
        enhancement_map = resolve_enhancement_map(config, [len(s) for s in dataset.train])
    return forward_graphs(graphs, table.values, config, enhancement_map)


def forward_graphs(graphs, values, config: ModelConfig, enhancement_map) -> dict:
    reps = {}
    for k, g in enumerate(graphs):
        layers = propagate(g, base_block(values, config, k), config.num_layers)
        reps[k] = BehaviorRepresentation(k, layers, layer_average(layers))
    for s, r in enhancement_map.items():
        reps[s].enhanced = enhance(reps[s].averaged, reps[r].averaged, config.aggregator)
        reps[s].rich_source = r
    return reps


def scoring_matrix(reps, behavior, num_users):
    """``(user_part, item_part)`` of the scoring matrix of ``behavior``."""
    S = reps[behavior].scoring
    return S[:num_users], S[num_users:]
