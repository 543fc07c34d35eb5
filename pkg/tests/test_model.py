import math

import numpy as np
import pytest

from mbgcf.exceptions import ConfigError, ShapeError
from mbgcf.graph import InteractionSet, build_graph
from mbgcf.model import (
    EmbeddingTable,
    ModelConfig,
    enhance,
    forward,
    init_embeddings,
    layer_average,
    propagate,
    resolve_enhancement_map,
    score,
)

from oracles import dense_adjacency, dense_normalize, random_interactions


def test_init_deterministic_and_moments():
    cfg = ModelConfig(embedding_dim=64, seed=9)
    a, b = init_embeddings(cfg, 1000, 600), init_embeddings(cfg, 1000, 600)
    assert np.array_equal(a.values, b.values)
    assert a.step == 0 and not a.first_moment.any() and not a.second_moment.any()
    x = a.values.ravel()[:100_000]
    se_mean = 0.1 / math.sqrt(len(x))
    assert abs(x.mean()) < 3 * se_mean
    # std of the sample std for a normal is sigma / sqrt(2n)
    assert abs(x.std() - 0.1) < 3 * 0.1 / math.sqrt(2 * len(x))


def test_init_per_behavior_width():
    t = init_embeddings(ModelConfig(embedding_dim=4, base_embedding_mode="per_behavior"), 3, 2, num_behaviors=3)
    assert t.values.shape == (5, 12)


@pytest.mark.parametrize("kwargs", [
    dict(init_scale=0.0), dict(embedding_dim=0), dict(num_layers=-1), dict(aggregator="max"),
    dict(base_embedding_mode="x"), dict(enhancement_map={1: 1}), dict(enhancement_map={1: 0, 0: 2}),
])
def test_model_config_invariants(kwargs):
    with pytest.raises(ConfigError):
        ModelConfig(**kwargs)


def test_embedding_table_rejects_nonfinite():
    with pytest.raises(ShapeError):
        EmbeddingTable(np.array([[np.nan]]))


def single_edge():
    return build_graph(InteractionSet.from_pairs(0, 1, 1, [(0, 0)]))


def test_propagate_zero_layers():
    base = np.eye(2)
    out = propagate(single_edge(), base, 0)
    assert len(out) == 1 and np.array_equal(out[0], base)


def test_propagate_two_cycle():
    out = propagate(single_edge(), np.eye(2), 2)
    assert [x.tolist() for x in out] == [[[1, 0], [0, 1]], [[0, 1], [1, 0]], [[1, 0], [0, 1]]]


def test_propagate_matches_dense_powers(rng):
    s = InteractionSet.from_pairs(0, 7, 8, random_interactions(rng, 7, 8, 20))
    Ahat = dense_normalize(dense_adjacency(s.to_dense()))
    base = rng.standard_normal((15, 6))
    out = propagate(build_graph(s), base, 3)
    for l, layer in enumerate(out):
        assert np.max(np.abs(layer - np.linalg.matrix_power(Ahat, l) @ base)) < 1e-11


def test_propagate_dimension_mismatch():
    with pytest.raises(ShapeError):
        propagate(single_edge(), np.ones((3, 2)), 1)


def test_layer_average_cases(rng):
    x = rng.standard_normal((3, 2))
    assert np.array_equal(layer_average([x]), x)
    assert layer_average([np.eye(2), np.eye(2)[::-1]]).tolist() == [[0.5, 0.5], [0.5, 0.5]]
    layers = [rng.standard_normal((4, 3)) for _ in range(4)]
    expected = np.zeros((4, 3))
    for r in range(4):
        for c in range(3):
            acc = 0.0
            for layer in layers:
                acc += layer[r, c]
            expected[r, c] = acc / 4
    assert np.array_equal(layer_average(layers), expected)
    with pytest.raises(ShapeError):
        layer_average([])


def test_enhance_cases(rng):
    x = rng.standard_normal((4, 3))
    assert np.array_equal(enhance(x, x, "mean"), x)
    assert enhance(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), "mean").tolist() == [[0.5, 0.5]]
    assert enhance(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), "concat").tolist() == [[1, 0, 0, 1]]
    assert enhance(x, x + 1, "none") is x
    with pytest.raises(ShapeError):
        enhance(x, x[:, :2], "mean")


def test_score_cases(rng):
    assert score([1, 2], [3, 4]) == 11
    assert score(rng.standard_normal(5), np.zeros(5)) == 0
    a, b = rng.standard_normal(64), rng.standard_normal(64)
    assert abs(score(a, b) - math.fsum(a * b)) < 1e-12
    with pytest.raises(ShapeError):
        score([1, 2], [1, 2, 3])


def test_default_enhancement_map():
    cfg = ModelConfig()
    assert resolve_enhancement_map(cfg, [10, 500, 30]) == {0: 1, 2: 1}
    assert resolve_enhancement_map(ModelConfig(aggregator="none"), [10, 500]) == {}
    assert resolve_enhancement_map(cfg, [10]) == {}
    assert resolve_enhancement_map(ModelConfig(enhancement_map={2: 0}), [10, 500, 30]) == {2: 0}


def _one_behavior(ds):
    return ds.select([ds.target_behavior])


def test_forward_degenerates_to_mf(small_synthetic):
    ds = _one_behavior(small_synthetic)
    cfg = ModelConfig(embedding_dim=4, num_layers=0, aggregator="none")
    table = init_embeddings(cfg, ds.num_users, ds.num_items)
    reps = forward(ds, table, cfg)
    assert np.array_equal(reps[0].scoring, table.values)


def test_forward_degenerates_to_lightgcn(small_synthetic):
    ds = _one_behavior(small_synthetic)
    cfg = ModelConfig(embedding_dim=4, num_layers=3, aggregator="mean")
    table = init_embeddings(cfg, ds.num_users, ds.num_items)
    reps = forward(ds, table, cfg)
    g = build_graph(ds.train[0])
    E = table.values
    layers = [E]
    for _ in range(3):
        layers.append(g._csr @ layers[-1])
    expected = (((layers[0] + layers[1]) + layers[2]) + layers[3]) / 4
    assert reps[0].enhanced is None
    assert reps[0].scoring.tobytes() == expected.tobytes()


@pytest.mark.parametrize("aggregator", ["mean", "concat"])
def test_forward_enhanced_scores_expand(small_synthetic, aggregator):
    ds = small_synthetic
    cfg = ModelConfig(embedding_dim=5, num_layers=2, aggregator=aggregator)
    table = init_embeddings(cfg, ds.num_users, ds.num_items)
    reps = forward(ds, table, cfg)
    M = ds.num_users
    Es, Er = reps[1].averaged, reps[0].averaged
    assert reps[1].rich_source == 0 and reps[0].enhanced is None
    width = 5 if aggregator == "mean" else 10
    assert reps[1].scoring.shape == (M + ds.num_items, width)
    for u, i in [(0, 0), (3, 7), (11, 19)]:
        got = score(reps[1].scoring[u], reps[1].scoring[M + i])
        if aggregator == "mean":
            su, si = 0.5 * (Es[u] + Er[u]), 0.5 * (Es[M + i] + Er[M + i])
            expected = sum(su[c] * si[c] for c in range(5))
        else:
            expected = Es[u] @ Es[M + i] + Er[u] @ Er[M + i]
        assert abs(got - expected) < 1e-12


def test_forward_is_linear(small_synthetic, rng):
    ds = small_synthetic
    for agg in ("mean", "concat"):
        cfg = ModelConfig(embedding_dim=3, num_layers=3, aggregator=agg)
        n = ds.num_users + ds.num_items
        a, b = rng.standard_normal((n, 3)), rng.standard_normal((n, 3))
        ra = forward(ds, EmbeddingTable(a), cfg)
        rb = forward(ds, EmbeddingTable(b), cfg)
        rab = forward(ds, EmbeddingTable(a + b), cfg)
        for k in ra:
            assert np.max(np.abs(rab[k].scoring - ra[k].scoring - rb[k].scoring)) < 1e-10


def test_per_behavior_mode_uses_separate_blocks(small_synthetic, rng):
    ds = small_synthetic
    cfg = ModelConfig(embedding_dim=3, num_layers=1, aggregator="none", base_embedding_mode="per_behavior")
    table = init_embeddings(cfg, ds.num_users, ds.num_items, ds.num_behaviors)
    values = table.values.copy()
    values[:, 3:] = 0.0
    reps = forward(ds, EmbeddingTable(values), cfg)
    assert reps[0].averaged.any() and not reps[1].averaged.any()
