import logging
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from mbgcf.data import (
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
from mbgcf.exceptions import ConfigError, DataError
from mbgcf.graph import InteractionSet


def make_log(records, names=("click", "cart", "purchase")):
    return RawEventLog(
        tuple(names), [r[0] for r in records], [r[1] for r in records],
        np.array([names.index(r[2]) for r in records], dtype=np.int64),
    )


def test_ingest_three_lines(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("u1\ti1\tclick\nu1\ti2\tcart\nu2\ti1\tpurchase\n")
    log = ingest(p)
    assert len(log) == 3
    assert log.records[2] == ("u2", "i1", "purchase")


def test_ingest_empty_file(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("")
    assert len(ingest(p)) == 0


def test_ingest_unknown_behavior_names_line(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("u1\ti1\tclick\nu1\ti2\tview\n")
    with pytest.raises(DataError, match=r":2: unknown behavior 'view'"):
        ingest(p)


def test_ingest_malformed_row(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("u1\ti1\tclick\nu1\ti2\n")
    with pytest.raises(DataError, match=r":2: expected at least 3 columns"):
        ingest(p)


def test_ingest_missing_file(tmp_path):
    with pytest.raises(DataError, match="cannot read"):
        ingest(tmp_path / "missing.tsv")


def test_ingest_header_and_named_columns(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("action,item,user\nclick,i1,u1\ncart,i1,u2\n")
    log = ingest(p, user_col="user", item_col="item", behavior_col="action", delimiter=",", header=True)
    assert log.records == [("u1", "i1", "click"), ("u2", "i1", "cart")]


def test_filter_removes_user_below_threshold():
    recs = [("a", "i0", "click")] * 19 + [("b", f"i{t % 2}", "click") for t in range(40)]
    out = filter_cold_start(make_log(recs), threshold=20)
    assert set(out.users) == {"b"}
    assert len(out) == 40


def test_filter_keeps_everything_above_threshold():
    recs = [(f"u{t % 2}", f"i{t % 2}", "click") for t in range(80)]
    log = make_log(recs)
    out = filter_cold_start(log, threshold=20)
    assert out.records == log.records


def test_filter_matches_brute_force():
    rng = np.random.default_rng(0)
    names = ("click", "cart", "purchase")
    users, items = ["u0", "u1", "u2"], ["i0", "i1", "i2"]
    recs = [(users[rng.integers(3)], items[rng.integers(3)], names[rng.integers(3)]) for _ in range(50)]
    recs += [("u0", "i0", "click")] * 5
    threshold = 16

    ucount = Counter(r[0] for r in recs)
    icount = Counter(r[1] for r in recs)
    expected = [r for r in recs if ucount[r[0]] >= threshold and icount[r[1]] >= threshold]

    assert filter_cold_start(make_log(recs), threshold).records == expected


def _pairs_log(n, behavior="purchase"):
    return make_log([(f"u{t}", f"i{t % 7}", behavior) for t in range(n)])


def test_split_counts():
    ds = split(_pairs_log(10), 0.8, seed=1)
    k = ds.behavior_names.index("purchase")
    assert len(ds.train[k]) == 8 and len(ds.test[k]) == 2


def test_split_ratio_one_gives_empty_test():
    ds = split(_pairs_log(10), 1.0, seed=1)
    assert all(len(t) == 0 for t in ds.test)


def test_split_rounding_uses_ceil():
    ds = split(_pairs_log(7), 0.7, seed=0)
    assert len(ds.train[2]) == 5  # ceil(4.9)
    ds = split(_pairs_log(10), 0.7, seed=0)
    assert len(ds.train[2]) == 7


def test_split_seeded():
    log = _pairs_log(100)
    a, b, c = split(log, 0.8, seed=5), split(log, 0.8, seed=5), split(log, 0.8, seed=6)
    assert np.array_equal(a.train[2].pairs, b.train[2].pairs)
    assert not np.array_equal(a.train[2].pairs, c.train[2].pairs)


def test_split_disjoint_and_complete(toy_log):
    log = ingest(toy_log)
    ds = split(log, 0.8, seed=0)
    for k in range(3):
        tr, te = ds.train[k], ds.test[k]
        assert not np.intersect1d(tr.keys, te.keys).size
        n_dedup = len({(u, i) for u, i, b in log.records if b == ds.behavior_names[k]})
        assert len(tr) + len(te) == n_dedup
    assert sorted(ds.user_ids) == ["u0", "u1", "u2", "u3"]


def test_split_keeps_sources_whole(toy_log):
    ds = split(ingest(toy_log), 0.5, seed=0, split_source_behaviors=False)
    assert len(ds.test[0]) == 0 and len(ds.test[1]) == 0
    assert len(ds.test[2]) > 0


def test_split_warns_on_empty_behavior(caplog):
    with caplog.at_level(logging.WARNING):
        ds = split(_pairs_log(5, "click"), 0.8, seed=0)
    assert len(ds.train[2]) == 0
    assert "no interactions" in caplog.text


def test_sample_negative_forced_choice():
    s = InteractionSet.from_pairs(0, 1, 2, [(0, 0)])
    rng = np.random.default_rng(0)
    assert all(sample_negative(s, 0, rng) == 1 for _ in range(50))
    assert (sample_negatives(s, np.zeros(50, dtype=int), rng) == 1).all()


def test_sample_negative_degenerate_user():
    s = InteractionSet.from_pairs(0, 1, 3, [(0, 0), (0, 1), (0, 2)])
    with pytest.raises(DataError, match="positive on all"):
        sample_negative(s, 0, np.random.default_rng(0))
    with pytest.raises(DataError, match="positive on all"):
        sample_negatives(s, [0], np.random.default_rng(0))


def test_sample_negative_uniform():
    s = InteractionSet.from_pairs(0, 1, 100, [(0, 0)])
    draws = sample_negatives(s, np.zeros(100_000, dtype=int), np.random.default_rng(7))
    counts = np.bincount(draws, minlength=100)
    assert counts[0] == 0
    p = 1 / 99
    freq = counts[1:] / len(draws)
    se = np.sqrt(p * (1 - p) / len(draws))
    z = np.abs(freq - p) / se
    # 99 simultaneous 3-SE bands: ~0.27 items expected outside by chance
    assert np.sum(z >= 3) <= 3
    assert z.max() < 4.5
    assert stats.chisquare(counts[1:]).pvalue > 1e-3


def test_sampler_never_returns_positive(small_synthetic):
    s = small_synthetic.train[0]
    rng = np.random.default_rng(1)
    users = rng.choice(np.unique(s.users), size=10_000)
    neg = sample_negatives(s, users, rng)
    assert not s.contains(users, neg).any()


def test_synthetic_sizes_and_nesting():
    ds = generate_synthetic(SyntheticSpec(10, 10, 3, (0.5, 0.1), seed=0, split_ratio=1.0))
    assert [len(s) for s in ds.train] == [50, 10]
    assert np.isin(ds.train[1].keys, ds.train[0].keys).all()


def test_synthetic_deterministic():
    spec = SyntheticSpec(20, 15, 4, (0.3, 0.05), seed=4)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    for x, y in zip(a.train + a.test, b.train + b.test):
        assert np.array_equal(x.pairs, y.pairs)


def test_synthetic_imbalance_ratio_exact():
    ds = generate_synthetic(SyntheticSpec(100, 100, 8, (0.3, 0.03), seed=0))
    totals = [len(tr) + len(te) for tr, te in zip(ds.train, ds.test)]
    assert totals == [3000, 300]
    assert totals[0] / totals[1] == 10.0


def test_synthetic_nesting_three_behaviors():
    ds = generate_synthetic(SyntheticSpec(40, 30, 5, (0.2, 0.05, 0.01), seed=2))
    full = [np.union1d(tr.keys, te.keys) for tr, te in zip(ds.train, ds.test)]
    assert np.isin(full[1], full[0]).all() and np.isin(full[2], full[1]).all()
    assert ds.behavior_names == ("click", "cart", "purchase")
    assert ds.target_name == "purchase"


@pytest.mark.parametrize("fractions", [(0.5, 0.6), (0.0, 0.0), (1.5,)])
def test_synthetic_spec_validation(fractions):
    with pytest.raises(ConfigError):
        SyntheticSpec(10, 10, 2, fractions)


def test_synthetic_zero_pair_behavior():
    with pytest.raises(ConfigError, match="empty behavior"):
        generate_synthetic(SyntheticSpec(10, 10, 2, (0.5, 0.001)))


def test_dataset_roundtrip(tmp_path, small_synthetic):
    write_dataset(small_synthetic, tmp_path / "d", extra={"seed": 3})
    back = read_dataset(tmp_path / "d")
    assert back.behavior_names == small_synthetic.behavior_names
    assert back.target_behavior == small_synthetic.target_behavior
    for x, y in zip(back.train + back.test, small_synthetic.train + small_synthetic.test):
        assert np.array_equal(x.pairs, y.pairs)
    lines = (tmp_path / "d" / "b0.train.txt").read_text().splitlines()
    pairs = [tuple(map(int, ln.split("\t"))) for ln in lines]
    assert pairs == sorted(pairs)


def test_dataset_select(small_synthetic):
    one = small_synthetic.select(["b1"])
    assert one.num_behaviors == 1 and one.target_behavior == 0
    assert np.array_equal(one.train[0].pairs, small_synthetic.train[1].pairs)
    assert one.train[0].behavior_id == 0
    with pytest.raises(ConfigError):
        small_synthetic.select(["b0"])
