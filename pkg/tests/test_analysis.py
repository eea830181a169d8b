"""Protocol metrics: nMI, WNsim, permutation tests, k-means.

Oracle values in this file were derived by hand or by independent
brute-force enumeration, not by running the functions under test.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refgame.agents import ChannelConfig, EncoderConfig
from refgame.analysis import (Protocol, collect_protocol, contingency_table,
                              kmeans, nmi_metric,
                              normalized_mutual_information, permutation_test,
                              wnsim, wnsim_metric)
from refgame.data.render import RenderConfig
from refgame.data.splits import SplitCounts, make_splits
from refgame.data.taxonomy import build_taxonomy
from refgame.errors import ConfigError, DataError
from refgame.game import TrainConfig, build_model
from refgame.seeding import derive_rng

# hand-checked: C = (a,a,b,b), S = (0,0,0,1)
# H(C) = ln 2, H(S) = -(3/4 ln 3/4 + 1/4 ln 1/4), joint {a0:2, b0:1, b1:1}
NMI_ORACLE = 0.3437110184854508


def _sim2():
    return np.array([[1.0, 1 / 3], [1 / 3, 1.0]])


# ---------------------------------------------------------------------------
# nMI


def test_nmi_oracle_value():
    res = normalized_mutual_information(np.array([0, 0, 1, 1]),
                                        np.array([0, 0, 0, 1]))
    assert res.value == pytest.approx(NMI_ORACLE, abs=1e-9)
    assert res.category_entropy == pytest.approx(np.log(2), abs=1e-12)
    assert res.symbol_entropy == pytest.approx(
        -(0.75 * np.log(0.75) + 0.25 * np.log(0.25)), abs=1e-12)
    assert not res.degenerate


def test_nmi_bijection_is_one():
    cats = np.array([0, 1, 2, 3] * 4)
    syms = np.array([7, 2, 9, 5] * 4)
    assert normalized_mutual_information(cats, syms).value == pytest.approx(1.0,
                                                                            abs=1e-12)


def test_nmi_constant_symbols_is_zero():
    res = normalized_mutual_information(np.array([0, 1, 2, 0]),
                                        np.array([4, 4, 4, 4]))
    assert res.value == 0.0
    assert res.degenerate  # one side has zero entropy


def test_nmi_both_degenerate_is_one():
    res = normalized_mutual_information(np.array([3, 3, 3]), np.array([1, 1, 1]))
    assert res.value == 1.0
    assert res.degenerate


def test_nmi_identity_mi_decomposition():
    # MI from the table equals H(C) + H(S) - H(C,S)
    rng = np.random.default_rng(0)
    cats = rng.integers(0, 5, size=200)
    syms = (cats * 3 + rng.integers(0, 2, size=200)) % 7
    res = normalized_mutual_information(cats, syms)
    table = contingency_table(cats, syms).astype(np.float64)
    p = table / table.sum()
    pc = p.sum(axis=1)
    ps = p.sum(axis=0)

    def ent(q):
        q = q[q > 0]
        return float(-(q * np.log(q)).sum())

    joint = ent(p.ravel())
    assert res.mutual_information == pytest.approx(ent(pc) + ent(ps) - joint,
                                                   abs=1e-12)
    assert 0.0 <= res.value <= 1.0 + 1e-12


def test_nmi_empty_rejected():
    with pytest.raises(DataError):
        normalized_mutual_information(np.array([]), np.array([]))
    with pytest.raises(DataError):
        contingency_table(np.array([0, 1]), np.array([0]))


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=2, max_value=40), st.integers(min_value=0, max_value=9999))
def test_nmi_relabeling_invariance(n, seed):
    rng = np.random.default_rng(seed)
    cats = rng.integers(0, 4, size=n)
    syms = rng.integers(0, 6, size=n)
    base = normalized_mutual_information(cats, syms).value
    cat_map = rng.permutation(4)
    sym_map = rng.permutation(6) + 100  # relabel onto a disjoint range
    rel = normalized_mutual_information(cat_map[cats], sym_map[syms]).value
    assert rel == pytest.approx(base, abs=1e-12)
    assert -1e-12 <= base <= 1.0 + 1e-12


# ---------------------------------------------------------------------------
# WNsim


def test_wnsim_single_sibling_pair():
    res = wnsim(np.array([0, 1]), np.array([4, 4]), _sim2())
    assert res.value == pytest.approx(1 / 3, abs=1e-12)
    assert res.n_pairs == 1 and not res.sampled


def test_wnsim_three_record_oracle():
    # pairs: (x,x) = 1, (x,sib) = 1/3 twice -> mean 5/9
    res = wnsim(np.array([0, 0, 1]), np.array([2, 2, 2]), _sim2())
    assert res.value == pytest.approx(5 / 9, abs=1e-12)
    assert res.n_pairs == 3


def test_wnsim_identical_leaves_is_one():
    res = wnsim(np.array([3, 3, 3, 3]), np.array([0, 0, 1, 1]),
                build_taxonomy().leaf_similarity_matrix())
    assert res.value == pytest.approx(1.0, abs=1e-12)
    assert res.n_pairs == 2  # one pair inside each symbol group


def test_wnsim_no_pairs_is_undefined_not_zero():
    res = wnsim(np.array([0, 1, 0]), np.array([1, 2, 3]), _sim2())
    assert res.value is None
    assert not res.defined
    assert res.n_pairs == 0


def test_wnsim_pooling_not_average_of_averages():
    # symbol 0: one pair of sims {1}; symbol 1: three pairs {1/3, 1/3, 1/3}
    # pooled mean = (1 + 3 * 1/3) / 4 = 1/2; average of averages would be 2/3
    S = _sim2()
    cats = np.array([0, 0, 0, 1, 0, 1])
    syms = np.array([7, 7, 8, 8, 8, 8])
    # symbol 7 pair: (0,0) -> 1
    # symbol 8 pairs: (0,1), (0,0)? enumerate: records 2,3,4,5 with cats 0,1,0,1
    # pairs: (0,1)=1/3 (0,0)=1 (0,1)=1/3 (1,0)=1/3 (1,1)=1 (0,1)=1/3 -> six pairs
    expect = (1 + (1 / 3 + 1 + 1 / 3 + 1 / 3 + 1 + 1 / 3)) / 7
    res = wnsim(cats, syms, S)
    assert res.value == pytest.approx(expect, abs=1e-12)
    assert res.n_pairs == 7


def test_wnsim_record_order_invariance():
    rng = np.random.default_rng(4)
    cats = rng.integers(0, 2, size=30)
    syms = rng.integers(0, 3, size=30)
    base = wnsim(cats, syms, _sim2()).value
    perm = rng.permutation(30)
    assert wnsim(cats[perm], syms[perm], _sim2()).value == pytest.approx(base,
                                                                         abs=1e-12)


def test_wnsim_subsampling_flags_and_approximates():
    rng = np.random.default_rng(1)
    cats = rng.integers(0, 2, size=400)
    syms = np.zeros(400, dtype=np.int64)  # one giant group: 79800 pairs
    exact = wnsim(cats, syms, _sim2(), pair_cap=100000).value
    sampled = wnsim(cats, syms, _sim2(), pair_cap=5000, rng=derive_rng(0, "s"))
    assert sampled.sampled
    assert sampled.n_pairs == 79800  # reports the full pool, flags the sampling
    assert sampled.value == pytest.approx(exact, abs=0.02)
    # deterministic under the same rng stream
    again = wnsim(cats, syms, _sim2(), pair_cap=5000, rng=derive_rng(0, "s"))
    assert again.value == sampled.value


# ---------------------------------------------------------------------------
# permutation test


def test_perfect_protocol_p_is_exactly_one_over_1000():
    cats = np.repeat(np.arange(4), 6)
    syms = cats * 2 + 1  # bijective map: observed nMI = 1 beats all shuffles
    res = permutation_test(nmi_metric, cats, syms, permutations=999, alpha=0.01,
                           rng=derive_rng(0, "p"))
    assert res.p_value == pytest.approx(0.001, abs=1e-15)
    assert res.significant
    assert res.observed == pytest.approx(1.0, abs=1e-12)


def test_constant_symbols_p_is_one():
    # nMI is 0 for the observed labels and for every permutation
    cats = np.array([0, 1, 2, 3] * 3)
    syms = np.full(12, 5)
    res = permutation_test(nmi_metric, cats, syms, permutations=99, alpha=0.01,
                           rng=derive_rng(1, "p"))
    assert res.p_value == 1.0
    assert not res.significant


def test_permutation_determinism():
    rng_cats = np.random.default_rng(2)
    cats = rng_cats.integers(0, 4, size=50)
    syms = rng_cats.integers(0, 8, size=50)
    r1 = permutation_test(nmi_metric, cats, syms, permutations=199,
                          rng=derive_rng(3, "p"))
    r2 = permutation_test(nmi_metric, cats, syms, permutations=199,
                          rng=derive_rng(3, "p"))
    assert r1.p_value == r2.p_value


def test_untestable_statistic_propagates():
    # every symbol unique -> WNsim has no pairs -> untestable, not an error
    cats = np.array([0, 1, 0, 1])
    syms = np.array([0, 1, 2, 3])
    res = permutation_test(wnsim_metric(_sim2()), cats, syms, permutations=99,
                           rng=derive_rng(4, "p"))
    assert not res.testable
    assert res.observed is None and res.p_value is None and res.significant is None
    assert res.to_dict()["testable"] is False


def test_permutation_test_validation():
    cats = np.array([0, 1])
    syms = np.array([0, 1])
    with pytest.raises(ConfigError):
        permutation_test(nmi_metric, cats, syms, permutations=0)
    with pytest.raises(ConfigError):
        permutation_test(nmi_metric, cats, syms, permutations=9, alpha=1.5)


def test_random_symbols_rarely_significant():
    # quick version of the full control study: 20 synthetic protocols
    cats = np.repeat(np.arange(6), 10)
    hits = 0
    for trial in range(20):
        syms = derive_rng(5, "ctl", trial).integers(0, 8, size=len(cats))
        res = permutation_test(nmi_metric, cats, syms, permutations=199,
                               alpha=0.01, rng=derive_rng(5, "perm", trial))
        hits += int(res.significant)
    assert hits <= 2


# ---------------------------------------------------------------------------
# k-means


def test_kmeans_separated_clouds():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(40, 3)) * 0.1
    b = rng.normal(size=(40, 3)) * 0.1 + 50.0
    pts = np.vstack([a, b])
    res = kmeans(pts, 2, derive_rng(0, "k"))
    assert res.converged
    first, second = res.assignments[:40], res.assignments[40:]
    assert len(set(first)) == 1 and len(set(second)) == 1
    assert first[0] != second[0]
    assert res.inertia == pytest.approx(((a - a.mean(0)) ** 2).sum()
                                        + ((b - b.mean(0)) ** 2).sum(), rel=1e-9)


def test_kmeans_k_equals_n():
    pts = np.random.default_rng(1).normal(size=(7, 2))
    res = kmeans(pts, 7, derive_rng(1, "k"))
    assert len(set(res.assignments)) == 7
    assert res.inertia == pytest.approx(0.0, abs=1e-18)


def test_kmeans_translation_invariance():
    pts = np.random.default_rng(2).normal(size=(30, 4))
    r1 = kmeans(pts, 3, derive_rng(2, "k"))
    r2 = kmeans(pts + 1000.0, 3, derive_rng(2, "k"))
    np.testing.assert_array_equal(r1.assignments, r2.assignments)


def test_kmeans_validation():
    pts = np.zeros((3, 2))
    with pytest.raises(ConfigError):
        kmeans(pts, 4, derive_rng(0, "k"))
    with pytest.raises(ConfigError):
        kmeans(pts, 0, derive_rng(0, "k"))


# ---------------------------------------------------------------------------
# protocol container


def test_protocol_csv_roundtrip(tmp_path):
    proto = Protocol(sample_ids=np.array([5, 6, 7]),
                     categories=np.array([0, 0, 2]),
                     symbols=np.array([1, 1, 4]))
    path = tmp_path / "p.csv"
    proto.save_csv(path)
    back = Protocol.load_csv(path)
    np.testing.assert_array_equal(back.sample_ids, proto.sample_ids)
    np.testing.assert_array_equal(back.categories, proto.categories)
    np.testing.assert_array_equal(back.symbols, proto.symbols)
    assert back.size() == 2
    assert len(back) == 3


def test_protocol_size_counts_distinct_symbols():
    proto = Protocol(sample_ids=np.arange(4), categories=np.zeros(4, dtype=int),
                     symbols=np.array([0, 1, 1, 5]))
    assert proto.size() == 3


def test_protocol_rejects_bad_csv(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("alpha,beta\n1,2\n")
    with pytest.raises(DataError):
        Protocol.load_csv(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("sample_id,category_id,symbol\n")
    with pytest.raises(DataError):
        Protocol.load_csv(empty)


def test_collect_protocol_deterministic_and_bounded():
    cfg = TrainConfig(encoder=EncoderConfig(conv_channels=(4, 8), hidden_dim=16,
                                            feature_dim=16, embed_dim=16,
                                            image_size=16),
                      channel=ChannelConfig(vocab_size=8))
    model = build_model(cfg)
    _, ds = make_splits(seed=0, counts=SplitCounts(train_per_category=1,
                                                   val_per_category=1,
                                                   holdout_per_category=1,
                                                   blob_count=4),
                        render_config=RenderConfig(image_size=16))
    p1 = collect_protocol(model, ds["val"])
    p2 = collect_protocol(model, ds["val"])
    np.testing.assert_array_equal(p1.symbols, p2.symbols)
    assert len(p1) == len(ds["val"])
    assert p1.symbols.min() >= 0 and p1.symbols.max() < 8
    assert p1.size() <= min(8, len(p1))
    np.testing.assert_array_equal(p1.categories, ds["val"].labels)
