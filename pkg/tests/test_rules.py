import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_pair_rules

from raid.core import ColumnSpec, Dataset, discretize
from raid.rules import (AssociationRule, ItemCatalog, aggregate, filter_pairs, mine_draws,
                        mine_iterate, mine_rules, top_pair_candidates, top_pair_per_iterate)


def binary_view(B):
    B = np.asarray(B, dtype=float)
    cols = tuple(ColumnSpec.categorical(f"X{j + 1}", ["0", "1"]) for j in range(B.shape[1]))
    return discretize(Dataset(cols, B, np.zeros(B.shape[0])), 2)


def as_tuples(rules, names):
    out = set()
    for r in rules:
        (ca, va), = r.antecedent
        (cb, vb), = r.consequent
        out.add(((names.index(ca), int(va)), (names.index(cb), int(vb)),
                 round(r.support, 12), round(r.confidence, 12)))
    return out


def test_worked_example():
    # 10 rows; A=1 everywhere; B=1 in 8 of them
    B = np.column_stack([np.ones(10), np.r_[np.ones(8), np.zeros(2)]])
    view = binary_view(B)
    rules = mine_rules(np.arange(10), ItemCatalog(view), 0.25, 0.5)
    r = [x for x in rules if x.antecedent == (("X1", "1"),) and x.consequent == (("X2", "1"),)]
    assert len(r) == 1
    assert r[0].support == pytest.approx(0.8) and r[0].confidence == pytest.approx(0.8)


def test_min_support_one_keeps_universal_items_only():
    B = np.array([[1, 0, 1], [1, 1, 1], [1, 0, 0], [1, 1, 1]])
    rules = mine_rules(np.arange(4), ItemCatalog(binary_view(B)), 1.0, 0.5)
    assert rules == []
    B[:, 2] = 1
    rules = mine_rules(np.arange(4), ItemCatalog(binary_view(B)), 1.0, 0.5)
    assert {(r.antecedent, r.consequent) for r in rules} == {
        ((("X1", "1"),), (("X3", "1"),)), ((("X3", "1"),), (("X1", "1"),))}


def test_brute_force_on_uniform_matrix():
    B = np.random.default_rng(0).integers(0, 2, (200, 3))
    rules = mine_rules(np.arange(200), ItemCatalog(binary_view(B)), 0.25, 0.5)
    assert as_tuples(rules, ["X1", "X2", "X3"]) == brute_force_pair_rules(B, 0.25, 0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 60), st.integers(2, 7), st.integers(0, 2**31 - 1),
       st.sampled_from([0.1, 0.25, 0.4]), st.sampled_from([0.3, 0.5, 0.8]))
def test_matches_brute_force_property(n, p, seed, supp, conf):
    B = np.random.default_rng(seed).integers(0, 2, (n, p))
    rules = mine_rules(np.arange(n), ItemCatalog(binary_view(B)), supp, conf)
    names = [f"X{j + 1}" for j in range(p)]
    assert as_tuples(rules, names) == brute_force_pair_rules(B, supp, conf)
    for r in rules:
        assert r.support <= r.confidence + 1e-12


def test_output_order_is_deterministic():
    B = np.random.default_rng(3).integers(0, 2, (50, 4))
    view = binary_view(B)
    rules = mine_rules(np.arange(50), ItemCatalog(view), 0.2, 0.4)
    keys = [(r.antecedent, r.consequent) for r in rules]
    assert keys == sorted(keys, key=lambda k: (k[0][0][0], k[0][0][1], k[1][0][0], k[1][0][1]))


def test_higher_order_itemsets():
    B = np.ones((12, 3))
    rules = mine_rules(np.arange(12), ItemCatalog(binary_view(B)), 0.5, 0.5, max_order=3)
    assert any(len(r.antecedent) == 2 for r in rules)
    assert all(len(r.consequent) == 1 for r in rules)


def test_mine_iterate_cluster_size_filter():
    B = np.random.default_rng(1).integers(0, 2, (30, 3))
    cat = ItemCatalog(binary_view(B))
    small = np.repeat(np.arange(1, 4), 10)
    small[:] = np.arange(30) % 5 + 1  # five clusters of 6
    assert mine_iterate(small, cat, 10) == []
    whole = mine_iterate(np.ones(30, int), cat, 10)
    assert whole == mine_rules(np.arange(30), cat)


def test_homogeneous_blocks_give_confidence_one():
    rng = np.random.default_rng(2)
    B = np.column_stack([np.r_[np.zeros(20), np.ones(20)], np.r_[np.zeros(20), np.ones(20)],
                         rng.integers(0, 2, 40)])
    labels = np.r_[np.ones(20, int), np.full(20, 2)]
    rules = mine_iterate(labels, ItemCatalog(binary_view(B)), 10)
    defining = [r for r in rules if r.columns == frozenset({"X1", "X2"})]
    assert len(defining) == 4
    assert all(r.confidence == 1.0 and r.support == 1.0 and r.cluster_size == 20 for r in defining)


def rule(a, b, supp, conf, size=20):
    return AssociationRule(((a, "1"),), ((b, "1"),), supp, conf, size)


ORDER = ["X1", "X2", "X3"]


def test_top_pair_per_iterate():
    assert top_pair_per_iterate([], ORDER) == set()
    assert top_pair_per_iterate([rule("X2", "X1", 0.3, 0.6)], ORDER) == {("X1", "X2")}
    tie = [rule("X1", "X2", 0.3, 0.6), rule("X3", "X2", 0.4, 0.5)]
    assert top_pair_per_iterate(tie, ORDER) == {("X1", "X2"), ("X2", "X3")}
    rules = [rule("X1", "X2", 0.3, 0.6), rule("X2", "X1", 0.3, 0.6), rule("X1", "X3", 0.5, 1.0)]
    # best single rule wins by default; summing favors pairs with many rules
    assert top_pair_per_iterate(rules, ORDER) == {("X1", "X3")}
    assert top_pair_per_iterate(rules, ORDER, score="sum") == {("X1", "X2")}
    with pytest.raises(ValueError):
        top_pair_per_iterate(rules, ORDER, score="mean")


def test_max_score_prefers_doubly_pure_pairs():
    # a cluster pure in X1 and X2 but split on X3: the summed score ranks
    # X1-X3 above X1-X2 only because the split column yields more rules
    B = np.column_stack([np.zeros(20), np.zeros(20), np.r_[np.zeros(10), np.ones(10)]])
    rules = mine_rules(np.arange(20), ItemCatalog(binary_view(B)), 0.25, 0.5)
    assert top_pair_per_iterate(rules, ORDER) == {("X1", "X2")}
    assert ("X1", "X2") not in top_pair_per_iterate(rules, ORDER, score="sum")


def test_aggregate_counts_and_symmetrizes():
    iterates = [[rule("X1", "X2", 0.3, 0.6), rule("X2", "X1", 0.5, 0.7)],
                [rule("X2", "X1", 0.4, 0.8)],
                [],
                [rule("X1", "X3", 0.3, 0.5)]]
    out = aggregate(iterates, ORDER, detect_threshold=0.0)
    assert [ps.pair for ps in out] == [("X1", "X2"), ("X1", "X3")]
    top = out[0]
    assert top.pr == 0.5 and top.n_iterates == 4
    assert top.mean_support == pytest.approx(0.4)
    assert top.mean_confidence == pytest.approx(0.7)
    assert [ps.pair for ps in aggregate(iterates, ORDER)] == [("X1", "X2")]
    assert set(out[0].as_row()) == {"pair", "Pr", "Supp", "Conf", "|S|"}
    with pytest.raises(ValueError):
        aggregate([], ORDER)


def test_aggregate_is_order_invariant():
    rng = np.random.default_rng(5)
    B = rng.integers(0, 2, (60, 3))
    labels = rng.integers(1, 3, (20, 60))
    its = mine_draws(labels, binary_view(B), 10)
    a = aggregate(its, ORDER, 0.0)
    b = aggregate(its[::-1], ORDER, 0.0)
    assert [(x.pair, x.pr, round(x.mean_support, 12)) for x in a] == \
        [(x.pair, x.pr, round(x.mean_support, 12)) for x in b]


def test_top_pair_candidates():
    tops = [{("X1", "X2")}, {("X1", "X2"), ("X2", "X3")}, {("X2", "X3")}, {("X1", "X3")}]
    cands, frac = top_pair_candidates(tops, ORDER)
    assert cands == [("X1", "X2"), ("X2", "X3")]
    assert frac[("X1", "X3")] == 0.25
    cands, _ = top_pair_candidates(tops, ORDER, min_fraction=0.25)
    assert cands == [("X1", "X2"), ("X1", "X3"), ("X2", "X3")]
    assert top_pair_candidates([set(), set()], ORDER) == ([], {})


def test_filter_pairs():
    iterates = [[rule("X1", "X2", 0.3, 0.6), rule("X2", "X3", 0.3, 0.6)]]
    out = filter_pairs(aggregate(iterates, ORDER), ["X1"])
    assert [ps.pair for ps in out] == [("X1", "X2")]
