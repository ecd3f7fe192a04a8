"""Association rules mined from the covariates of each posterior cluster and
their aggregation into ranked covariate pairs."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .core import DiscretizedView


@dataclass(frozen=True)
class AssociationRule:
    antecedent: tuple
    consequent: tuple
    support: float
    confidence: float
    cluster_size: int = 0

    @property
    def columns(self):
        return frozenset(c for c, _ in self.antecedent + self.consequent)

    def __str__(self):
        fmt = lambda items: "{" + ",".join(f"{c}={v}" for c, v in items) + "}"
        return (f"{fmt(self.antecedent)} => {fmt(self.consequent)} "
                f"[supp={self.support:.3f}, conf={self.confidence:.3f}, |S|={self.cluster_size}]")


@dataclass(frozen=True)
class PairSummary:
    pair: tuple
    pr: float
    mean_support: float
    mean_confidence: float
    mean_cluster_size: float
    n_iterates: int

    def as_row(self):
        return {"pair": " <=> ".join(self.pair), "Pr": self.pr, "Supp": self.mean_support,
                "Conf": self.mean_confidence, "|S|": self.mean_cluster_size}


class ItemCatalog:
    """Maps every (column, level) of a view to a column of a one-hot matrix."""

    def __init__(self, view: DiscretizedView):
        self.view = view
        self.items = []
        self.col_of = []
        offsets = []
        for j, name in enumerate(view.names):
            offsets.append(len(self.items))
            for lv in view.levels[j]:
                self.items.append((name, lv))
                self.col_of.append(j)
        self.col_of = np.array(self.col_of)
        m, p = view.codes.shape
        self.onehot = np.zeros((m, len(self.items)), dtype=np.int64)
        for j in range(p):
            self.onehot[np.arange(m), offsets[j] + view.codes[:, j]] = 1


def _frequent_itemsets(B, col_of, min_count, max_order):
    """Level-wise apriori over the one-hot block ``B``; returns a dict from
    sorted item-index tuples to counts."""
    counts1 = B.sum(axis=0)
    freq = {(i,): int(c) for i, c in enumerate(counts1) if c >= min_count}
    result = dict(freq)
    if max_order < 2 or len(freq) < 2:
        return result
    items = sorted(i for (i,) in freq)
    sub = B[:, items]
    pair_counts = sub.T @ sub
    level = {}
    for a in range(len(items)):
        for b in range(a + 1, len(items)):
            ia, ib = items[a], items[b]
            if col_of[ia] == col_of[ib]:
                continue
            c = int(pair_counts[a, b])
            if c >= min_count:
                level[(ia, ib)] = c
    result.update(level)
    order = 2
    while level and order < max_order:
        order += 1
        prev = sorted(level)
        prev_set = set(prev)
        nxt = {}
        for x, y in combinations(prev, 2):
            if x[:-1] != y[:-1]:
                continue
            cand = x + (y[-1],)
            if len({col_of[i] for i in cand}) < len(cand):
                continue
            if any(s not in prev_set for s in combinations(cand, order - 1)):
                continue
            c = int(np.all(B[:, list(cand)] == 1, axis=1).sum())
            if c >= min_count:
                nxt[cand] = c
        result.update(nxt)
        level = nxt
    return result


def mine_rules(block, catalog: ItemCatalog, min_support=0.25, min_confidence=0.5, max_order=2,
               cluster_size=None):
    """Apriori rules with a single-item consequent from the rows ``block``
    (row indices into the catalog's view).

    ``max_order`` bounds the itemset size, so ``max_order=2`` yields only
    one-item-to-one-item rules. Output is sorted by item position (column,
    then level).
    """
    rows = np.asarray(block, dtype=np.int64)
    n = rows.size
    if n == 0:
        return []
    B = catalog.onehot[rows]
    # small epsilon keeps thresholds like 0.25 * n exact under rounding
    min_count = int(np.ceil(min_support * n - 1e-9))
    itemsets = _frequent_itemsets(B, catalog.col_of, max(min_count, 1), max_order)
    rules = []
    size = n if cluster_size is None else cluster_size
    for iset, cnt in itemsets.items():
        if len(iset) < 2:
            continue
        for cons in iset:
            ante = tuple(i for i in iset if i != cons)
            conf = cnt / itemsets[ante]
            if conf + 1e-12 < min_confidence:
                continue
            rules.append((ante, (cons,), cnt / n, conf))
    rules.sort(key=lambda r: (r[0], r[1]))
    items = catalog.items
    return [AssociationRule(tuple(items[i] for i in a), tuple(items[i] for i in c), s, cf, size)
            for a, c, s, cf in rules]


def mine_iterate(labels, catalog: ItemCatalog, min_cluster=10, min_support=0.25,
                 min_confidence=0.5, max_order=2):
    """Rules of every cluster with at least ``min_cluster`` members of one
    partition (labels are any integer cluster ids)."""
    labels = np.asarray(labels)
    out = []
    for lab in np.unique(labels):
        rows = np.flatnonzero(labels == lab)
        if rows.size >= min_cluster:
            out.extend(mine_rules(rows, catalog, min_support, min_confidence, max_order))
    return out


def pair_of(rule: AssociationRule, order):
    cols = rule.columns
    if len(cols) != 2:
        return None
    return tuple(sorted(cols, key=order.index))


def top_pair_per_iterate(rules, order, tol=1e-9, score="max"):
    """Top pair(s) of one iterate; all tied pairs are returned.

    ``score="max"`` ranks pairs by their best single rule's support +
    confidence; ``score="sum"`` adds support + confidence over all of the
    pair's rules in the iterate.
    """
    if score not in ("max", "sum"):
        raise ValueError("score must be 'max' or 'sum'")
    totals = {}
    for r in rules:
        pr = pair_of(r, order)
        if pr is None:
            continue
        v = r.support + r.confidence
        if score == "sum":
            totals[pr] = totals.get(pr, 0.0) + v
        else:
            totals[pr] = max(totals.get(pr, 0.0), v)
    if not totals:
        return set()
    best = max(totals.values())
    return {pr for pr, v in totals.items() if v >= best - tol}


def aggregate(iterates, order, detect_threshold=0.5):
    """Pair-level summary over iterates (each a list of rules).

    ``pr`` is the fraction of iterates in which at least one rule involves
    the pair (direction ignored); averages run over all rules on the pair.
    Pairs with ``pr >= detect_threshold`` are returned, most frequent first.
    """
    T = len(iterates)
    if T == 0:
        raise ValueError("no iterates to aggregate")
    fired = defaultdict(int)
    sums = defaultdict(lambda: np.zeros(4))
    for rules in iterates:
        seen = set()
        for r in rules:
            pr = pair_of(r, order)
            if pr is None:
                continue
            seen.add(pr)
            sums[pr] += (r.support, r.confidence, r.cluster_size, 1.0)
        for pr in seen:
            fired[pr] += 1
    out = []
    for pr, cnt in fired.items():
        s = sums[pr]
        out.append(PairSummary(pr, cnt / T, s[0] / s[3], s[1] / s[3], s[2] / s[3], T))
    out = [ps for ps in out if ps.pr >= detect_threshold]
    out.sort(key=lambda ps: (-ps.pr, -ps.mean_support, [order.index(c) for c in ps.pair]))
    return out


def top_pair_candidates(top_sets, order, min_fraction=None):
    """Candidate pairs from the per-iterate top pairs.

    With ``min_fraction=None`` the pairs that were top most often are
    returned (ties kept); otherwise every pair that was top in at least that
    fraction of iterates. The per-pair fractions are returned as well.
    """
    T = len(top_sets)
    counts = defaultdict(int)
    for s in top_sets:
        for pr in s:
            counts[pr] += 1
    if not counts:
        return [], {}
    frac = {pr: c / T for pr, c in counts.items()}
    if min_fraction is None:
        best = max(counts.values())
        keep = [pr for pr, c in counts.items() if c == best]
    else:
        keep = [pr for pr, f in frac.items() if f >= min_fraction - 1e-12]
    return sorted(keep, key=lambda pr: [order.index(c) for c in pr]), frac


def mine_draws(labels_matrix, view: DiscretizedView, min_cluster=10, min_support=0.25,
               min_confidence=0.5, max_order=2):
    """Per-iterate rule lists for a (T, m) label matrix."""
    catalog = ItemCatalog(view)
    return [mine_iterate(lab, catalog, min_cluster, min_support, min_confidence, max_order)
            for lab in labels_matrix]


def filter_pairs(summaries, columns):
    cols = set(columns)
    return [ps for ps in summaries if cols.intersection(ps.pair)]
