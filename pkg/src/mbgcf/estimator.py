"""scikit-learn style front end.

``MultiBehaviorGCF`` follows the estimator protocol (``get_params`` /
``set_params`` / ``clone``) so variants and baselines can be built from one
parameter grid:

* ``aggregator="mean"`` / ``"concat"``: sparse behaviors enhanced by the richest one.
* ``aggregator="none"``: multi-task training without enhancement.
* ``behaviors="target"`` with ``num_layers=3``: single-behavior LightGCN.
* ``behaviors="target"`` with ``num_layers=0``: MF-BPR.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import Dataset
from .exceptions import DataError, ShapeError
from .metrics import EvalConfig, evaluate, _rank_row
from .model import ModelConfig, forward_graphs
from .trainer import TrainConfig, TrainingState, fit as fit_loop


def check_dataset(X) -> Dataset:
    if not isinstance(X, Dataset):
        raise TypeError(f"expected a mbgcf.data.Dataset, got {type(X).__name__}")
    if X.num_users < 1 or X.num_items < 1:
        raise DataError("dataset has no users or no items")
    return X


def check_users(users, num_users) -> np.ndarray:
    arr = np.asarray(users)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.integer):
        raise ShapeError(f"users must be a 1-D integer array, got dtype {arr.dtype} ndim {arr.ndim}")
    if len(arr) and (arr.min() < 0 or arr.max() >= num_users):
        raise ShapeError(f"user index out of range [0, {num_users})")
    return arr.astype(np.int64)


class MultiBehaviorGCF(BaseEstimator):
    """Multi-behavior graph collaborative filtering recommender.

    Parameters mirror :class:`ModelConfig`, :class:`TrainConfig` and
    :class:`EvalConfig`. ``behaviors`` selects the behaviors trained on:
    ``None`` for all, ``"target"`` for the target alone, or a list of names.
    A single ``seed`` feeds both initialization and sampling streams.
    """

    def __init__(self, embedding_dim=64, num_layers=3, aggregator="mean", enhancement_map=None,
                 base_embedding_mode="shared", stop_gradient=True, init_scale=0.1,
                 batch_size=2048, learning_rate=1e-3, l2=0.0, max_epochs=100, eval_every=1,
                 early_stop_patience=10, validation_fraction=0.0, top_k=20, behaviors=None,
                 seed=0, verbose=False):
        self.embedding_dim = embedding_dim
        self.num_layers = num_layers
        self.aggregator = aggregator
        self.enhancement_map = enhancement_map
        self.base_embedding_mode = base_embedding_mode
        self.stop_gradient = stop_gradient
        self.init_scale = init_scale
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.l2 = l2
        self.max_epochs = max_epochs
        self.eval_every = eval_every
        self.early_stop_patience = early_stop_patience
        self.validation_fraction = validation_fraction
        self.top_k = top_k
        self.behaviors = behaviors
        self.seed = seed
        self.verbose = verbose

    def model_config(self):
        return ModelConfig(
            embedding_dim=self.embedding_dim, num_layers=self.num_layers, aggregator=self.aggregator,
            enhancement_map=self.enhancement_map, base_embedding_mode=self.base_embedding_mode,
            stop_gradient=self.stop_gradient, init_scale=self.init_scale, seed=self.seed,
        )

    def train_config(self):
        return TrainConfig(
            batch_size=self.batch_size, learning_rate=self.learning_rate, l2=self.l2,
            max_epochs=self.max_epochs, eval_every=self.eval_every,
            early_stop_patience=self.early_stop_patience, top_k=self.top_k,
            validation_fraction=self.validation_fraction, seed=self.seed,
        )

    def _select(self, X: Dataset) -> Dataset:
        if self.behaviors is None:
            return X
        if self.behaviors == "target":
            return X.select([X.target_behavior])
        return X.select(self.behaviors)

    def fit(self, X, y=None, **fit_params):
        X = self._select(check_dataset(X))
        ckpt, history = fit_loop(
            X, self.model_config(), self.train_config(),
            on_epoch=print if self.verbose else None, **fit_params,
        )
        return self._load(ckpt, X, history)

    def _load(self, ckpt, dataset, history=None):
        state = TrainingState(dataset, ckpt.model_config, table=ckpt.table)
        state.enhancement_map = dict(ckpt.enhancement_map)
        self.dataset_ = dataset
        self.checkpoint_ = ckpt
        self.history_ = history
        self.enhancement_map_ = state.enhancement_map
        self.graphs_ = state.graphs
        self.representations_ = forward_graphs(
            state.graphs, ckpt.table.values, ckpt.model_config, state.enhancement_map
        )
        self.n_users_, self.n_items_ = dataset.num_users, dataset.num_items
        return self

    @classmethod
    def from_checkpoint(cls, ckpt, dataset: Dataset):
        """Rebuild a fitted estimator from a checkpoint and its dataset."""
        dataset = check_dataset(dataset)
        if (ckpt.num_users, ckpt.num_items) != (dataset.num_users, dataset.num_items):
            raise ShapeError(
                f"checkpoint expects {ckpt.num_users} users x {ckpt.num_items} items, "
                f"dataset has {dataset.num_users} x {dataset.num_items}"
            )
        if tuple(ckpt.behavior_names) != dataset.behavior_names:
            dataset = dataset.select(ckpt.behavior_names, target=ckpt.behavior_names[ckpt.target_behavior])
        cfg = ckpt.model_config
        est = cls(embedding_dim=cfg.embedding_dim, num_layers=cfg.num_layers, aggregator=cfg.aggregator,
                  enhancement_map=cfg.enhancement_map, base_embedding_mode=cfg.base_embedding_mode,
                  stop_gradient=cfg.stop_gradient, init_scale=cfg.init_scale, seed=cfg.seed)
        return est._load(ckpt, dataset)

    def decision_function(self, users, behavior=None):
        """Scores of every item for ``users`` under ``behavior`` (default target)."""
        check_is_fitted(self, "representations_")
        users = check_users(users, self.n_users_)
        k = self.dataset_.target_behavior if behavior is None else self.dataset_.behavior_index(behavior)
        S = self.representations_[k].scoring
        return np.einsum("ud,id->ui", S[users], S[self.n_users_:])

    def predict(self, users, k=None):
        """Top-``k`` target items per user, training positives excluded.

        Returns an ``(n_users, k)`` int array padded with ``-1`` where a user
        has fewer than ``k`` candidates.
        """
        check_is_fitted(self, "representations_")
        k = self.top_k if k is None else k
        users = check_users(users, self.n_users_)
        scores = self.decision_function(users)
        train = self.dataset_.train[self.dataset_.target_behavior]
        out = np.full((len(users), k), -1, dtype=np.int64)
        for r, (u, row) in enumerate(zip(users, scores)):
            top = _rank_row(row, train.positives_of(u), k)
            out[r, :len(top)] = top
        return out

    def transform(self, users, behavior=None):
        """Scoring-space embeddings of ``users``."""
        check_is_fitted(self, "representations_")
        users = check_users(users, self.n_users_)
        k = self.dataset_.target_behavior if behavior is None else self.dataset_.behavior_index(behavior)
        return self.representations_[k].scoring[users]

    def evaluate(self, X=None, k=None) -> "MetricsReport":  # noqa: F821
        check_is_fitted(self, "representations_")
        ds = self.dataset_ if X is None else self._align(check_dataset(X))
        return evaluate(self.representations_, ds, EvalConfig(k=self.top_k if k is None else k), seed=self.seed)

    def score(self, X=None, y=None):
        """Target-behavior Recall@``top_k`` on the test split."""
        return self.evaluate(X).recall

    def _align(self, X):
        if X.behavior_names == self.dataset_.behavior_names:
            return X
        return X.select(self.dataset_.behavior_names, target=self.dataset_.target_name)
