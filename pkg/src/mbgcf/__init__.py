"""Multi-behavior graph collaborative filtering with sparse-behavior enhancement."""

from .data import (
    Dataset,
    RawEventLog,
    SyntheticSpec,
    filter_cold_start,
    generate_synthetic,
    ingest,
    read_dataset,
    sample_negative,
    sample_negatives,
    split,
    write_dataset,
)
from .estimator import MultiBehaviorGCF
from .exceptions import CheckpointError, ConfigError, DataError, MBGCFError, NumericalError, ShapeError
from .graph import InteractionSet, NormalizedGraph, SparseMatrixCSR, build_adjacency, normalize_adjacency, spmm
from .metrics import EvalConfig, MetricsReport, evaluate, ndcg_at_k, rank_topk, recall_at_k
from .model import ModelConfig, forward, init_embeddings
from .trainer import TrainConfig, fit

__version__ = "0.1.0"
