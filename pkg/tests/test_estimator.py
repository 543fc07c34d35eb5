import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mbgcf import MultiBehaviorGCF
from mbgcf.exceptions import ShapeError


def small_model(**kw):
    params = dict(embedding_dim=8, num_layers=2, batch_size=64, learning_rate=0.01, max_epochs=3, top_k=5)
    params.update(kw)
    return MultiBehaviorGCF(**params)


def test_get_set_params_and_clone():
    est = small_model(aggregator="concat")
    params = est.get_params()
    assert params["aggregator"] == "concat" and params["batch_size"] == 64
    other = clone(est).set_params(aggregator="none")
    assert other.aggregator == "none" and est.aggregator == "concat"


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        small_model().predict([0])


def test_fit_rejects_non_dataset():
    with pytest.raises(TypeError):
        small_model().fit(np.zeros((3, 3)))


def test_fit_predict_shapes(small_synthetic):
    est = small_model().fit(small_synthetic)
    top = est.predict([0, 1, 2])
    assert top.shape == (3, 5)
    train = small_synthetic.train[small_synthetic.target_behavior]
    for u, row in zip([0, 1, 2], top):
        assert not set(row.tolist()) & set(train.positives_of(u).tolist())
    assert est.decision_function([0]).shape == (1, small_synthetic.num_items)
    assert est.transform([0, 1]).shape == (2, 8)
    assert 0.0 <= est.score() <= 1.0
    assert est.enhancement_map_ == {1: 0}


def test_concat_transform_width(small_synthetic):
    est = small_model(aggregator="concat").fit(small_synthetic)
    assert est.transform([0]).shape == (1, 16)
    assert est.transform([0], behavior="b0").shape == (1, 8)


def test_user_validation(small_synthetic):
    est = small_model(max_epochs=1).fit(small_synthetic)
    with pytest.raises(ShapeError):
        est.predict([small_synthetic.num_users])
    with pytest.raises(ShapeError):
        est.predict([0.5])


def test_target_only_baselines(small_synthetic):
    mf = small_model(behaviors="target", num_layers=0, aggregator="none").fit(small_synthetic)
    assert mf.dataset_.num_behaviors == 1
    assert np.array_equal(mf.representations_[0].scoring, mf.checkpoint_.table.values)
    report = mf.evaluate(small_synthetic)
    assert report.behavior == small_synthetic.target_name


def test_predict_pads_short_candidate_lists(small_synthetic):
    est = small_model(max_epochs=1).fit(small_synthetic)
    out = est.predict([0], k=small_synthetic.num_items)
    n_masked = len(small_synthetic.train[small_synthetic.target_behavior].positives_of(0))
    assert (out[0] == -1).sum() == n_masked


def test_per_behavior_mode_trains(small_synthetic):
    est = small_model(base_embedding_mode="per_behavior").fit(small_synthetic)
    assert est.checkpoint_.table.values.shape[1] == 16
