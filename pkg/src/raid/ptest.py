"""Posterior predictive sampling at fixed covariate values and a Polya-tree
k-sample permutation test for equality of the resulting densities."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from math import log

import numpy as np
from scipy import special, stats

from .config import PriorConfig
from .core import Dataset, DiscretizedView
from .ppmx import column_kinds

_LOG_PI = log(np.pi)


@dataclass(frozen=True)
class CovariateConfig:
    """A full covariate vector on the fitted dataset's scale (codes for
    categorical columns) plus the levels assigned to the free columns."""

    values: tuple
    free: tuple = ()

    @property
    def label(self):
        return ", ".join(f"{c}={lv}" for c, lv in self.free) or "baseline"


@dataclass
class PredictiveSample:
    group: str
    draws: np.ndarray
    states: np.ndarray = None


@dataclass
class TestReport:
    __test__ = False  # not a pytest class

    columns: tuple
    groups: list
    statistic: float
    p_value: float
    n_perm: int
    replicate_p: list = field(default_factory=list)
    replicate_statistic: list = field(default_factory=list)
    null_statistics: np.ndarray = None

    def to_dict(self):
        return {
            "columns": list(self.columns),
            "groups": [g.group for g in self.groups],
            "n_per_group": [int(g.draws.size) for g in self.groups],
            "statistic": float(self.statistic),
            "p_value": float(self.p_value),
            "n_perm": int(self.n_perm),
            "replicate_p": [float(p) for p in self.replicate_p],
            "replicate_statistic": [float(s) for s in self.replicate_statistic],
        }


class PredictiveEngine:
    """Allocation of a hypothetical new unit to the clusters of each retained
    state, with cluster covariate summaries cached per state."""

    def __init__(self, draws, ds: Dataset, prior: PriorConfig = None):
        if len(draws) == 0:
            raise ValueError("no posterior draws")
        if draws.m != ds.m:
            raise ValueError("draws and dataset disagree on the number of units")
        self.draws = draws
        self.ds = ds
        self.prior = prior or PriorConfig.from_dict(draws.config.get("prior"))
        self.kinds = column_kinds(ds)
        self._stats = {}

    def _state_stats(self, t):
        st = self._stats.get(t)
        if st is not None:
            return st
        lab = self.draws.labels[t] - 1
        k = int(lab.max()) + 1
        n = np.bincount(lab, minlength=k).astype(float)
        cols = []
        for j, kind in enumerate(self.kinds):
            x = self.ds.X[:, j]
            if kind is None:
                cols.append((np.bincount(lab, weights=x, minlength=k),
                             np.bincount(lab, weights=x * x, minlength=k)))
            else:
                cnt = np.zeros((k, kind))
                np.add.at(cnt, (lab, x.astype(np.int64)), 1.0)
                cols.append(cnt)
        st = (n, cols)
        self._stats[t] = st
        return st

    def allocation_log_weights(self, t, x0):
        """Unnormalized log weights: existing clusters of state ``t`` first,
        then the new-cluster option last."""
        n, cols = self._state_stats(t)
        coh = self.prior.cohesion
        h = self.prior.similarity
        if coh.kind == "dp":
            lw = np.log(n)
            lnew = log(coh.M)
        else:
            lw = np.zeros_like(n)
            lnew = 0.0
        lam0 = 1.0 / h.k0
        for j, kind in enumerate(self.kinds):
            v = x0[j]
            if kind is None:
                s, ss = cols[j]
                lw = lw + _nig_log_pred(v, n, s, ss, lam0, h.m0, h.nu0, h.kappa0)
                lnew += float(_nig_log_pred(v, 0.0, 0.0, 0.0, lam0, h.m0, h.nu0, h.kappa0))
            else:
                a = h.dirichlet_shape
                lw = lw + np.log(a + cols[j][:, int(v)]) - np.log(kind * a + n)
                lnew += -log(kind)
        return np.append(lw, lnew)

    def allocation_probs(self, t, x0):
        lw = self.allocation_log_weights(t, x0)
        w = np.exp(lw - lw.max())
        return w / w.sum()

    def draw_params(self, t, x0, rng):
        """(mu, sigma) of the cluster the new unit joins in state ``t``."""
        p = self.allocation_probs(t, x0)
        j = int(rng.choice(p.size, p=p))
        if j < p.size - 1:
            return self.draws.mu[t][j], self.draws.sig[t][j]
        mu = self.draws.mu0[t] + self.draws.sig0[t] * rng.standard_normal()
        sig = self.prior.A * rng.random()
        return mu, max(sig, 1e-300)

    def sample(self, x0, size, rng):
        """``size`` predictive draws, each from a uniformly chosen state."""
        x0 = np.asarray(x0, dtype=float)
        states = rng.integers(0, len(self.draws), size=size)
        out = np.empty(size)
        for i, t in enumerate(states):
            mu, sig = self.draw_params(int(t), x0, rng)
            out[i] = mu + sig * rng.standard_normal()
        return out, states


def _nig_log_pred(x, n, s, ss, lam0, m0, nu0, kappa0):
    n = np.asarray(n, dtype=float)
    lamn = lam0 + n
    mn = (lam0 * m0 + s) / lamn
    an = nu0 + 0.5 * n
    bn = np.maximum(kappa0 + 0.5 * (ss + lam0 * m0 * m0 - lamn * mn * mn), 1e-300)
    t = 2.0 * bn * (lamn + 1.0) / lamn
    return (special.gammaln(an + 0.5) - special.gammaln(an) - 0.5 * (_LOG_PI + np.log(t))
            - (an + 0.5) * np.log1p((x - mn) ** 2 / t))


def predictive_draw(engine: PredictiveEngine, x0, rng):
    """One draw from the posterior predictive at covariates ``x0``."""
    return float(engine.sample(x0, 1, rng)[0][0])


def grade_probabilities(engine: PredictiveEngine, x0, rng=None, states=None):
    """Predictive probability of each ordinal grade at ``x0``.

    Allocation to existing clusters is averaged exactly; the new-cluster
    option uses one base-measure draw of (mu, sigma) per state.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    bounds = np.concatenate([[-np.inf], engine.prior.cutpoints, [np.inf]])
    x0 = np.asarray(x0, dtype=float)
    states = range(len(engine.draws)) if states is None else states
    total = np.zeros(bounds.size - 1)
    count = 0
    for t in states:
        p = engine.allocation_probs(t, x0)
        mu = np.append(engine.draws.mu[t], engine.draws.mu0[t] + engine.draws.sig0[t] * rng.standard_normal())
        sig = np.append(engine.draws.sig[t], max(engine.prior.A * rng.random(), 1e-300))
        total += p @ interval_probabilities(mu, sig, bounds)
        count += 1
    probs = total / count
    return probs / probs.sum()


def interval_probabilities(mu, sig, bounds):
    """(k, K) matrix of N(mu, sig^2) mass on each interval of ``bounds``."""
    mu = np.atleast_1d(mu)[:, None]
    sig = np.atleast_1d(sig)[:, None]
    cdf = special.ndtr((bounds[None, :] - mu) / sig)
    return np.diff(cdf, axis=1)


def default_depth(n_total):
    return int(min(8, max(1, np.ceil(np.log2(max(n_total, 2))))))


def _tree_bins(pooled, depth):
    sd = pooled.std(ddof=1) if pooled.size > 1 else 0.0
    if not sd > 0 or not np.isfinite(sd):
        z = np.zeros_like(pooled)
    else:
        z = (pooled - pooled.mean()) / sd
    b = np.floor(special.ndtr(z) * (1 << depth)).astype(np.int64)
    return np.clip(b, 0, (1 << depth) - 1)


def _log_marginal_from_counts(C, depth, c):
    """Polya-tree log marginal (base density dropped) per leading index of a
    (..., 2**depth) count array."""
    total = np.zeros(C.shape[:-1])
    for j in range(depth, 0, -1):
        a = c * j * j
        left = C[..., 0::2]
        right = C[..., 1::2]
        total += (special.betaln(a + left, a + right) - special.betaln(a, a)).sum(axis=-1)
        C = left + right
    return total


def polya_tree_statistic(groups, depth=None, c=1.0):
    """Log Bayes factor of separate Polya trees per group against one common
    tree for the pooled sample."""
    return float(_stats_for_assignments([np.asarray(g, float) for g in groups], None, depth, c)[0])


def _stats_for_assignments(groups, perms, depth, c):
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    if any(g.size == 0 for g in groups):
        raise ValueError("empty group")
    pooled = np.concatenate(groups)
    n = pooled.size
    G = len(groups)
    depth = default_depth(n) if depth is None else depth
    bins = _tree_bins(pooled, depth)
    labels = np.repeat(np.arange(G), [g.size for g in groups])
    assign = labels[None, :] if perms is None else np.vstack([labels[None, :], perms])
    R = assign.shape[0]
    width = 1 << depth
    idx = (np.arange(R)[:, None] * G + assign) * width + bins[None, :]
    C = np.bincount(idx.ravel(), minlength=R * G * width).reshape(R, G, width).astype(float)
    per_group = _log_marginal_from_counts(C, depth, c).sum(axis=1)
    pooled_term = _log_marginal_from_counts(C.sum(axis=1)[:1], depth, c)[0]
    return per_group - pooled_term


def permutation_test(groups, n_perm=500, rng=None, depth=None, c=1.0):
    """Permute group membership over the pooled sample (sizes fixed) and
    compare the Polya-tree statistic with its permutation distribution.

    ``p = (1 + #{permuted >= observed}) / (1 + n_perm)``.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be at least 1")
    rng = rng if rng is not None else np.random.default_rng()
    groups = [np.asarray(g, dtype=float) for g in groups]
    labels = np.repeat(np.arange(len(groups)), [g.size for g in groups])
    perms = np.array([rng.permutation(labels) for _ in range(n_perm)])
    stat = _stats_for_assignments(groups, perms, depth, c)
    obs, null = stat[0], stat[1:]
    tol = 1e-9 * (1.0 + abs(obs))
    p = (1 + int(np.sum(null >= obs - tol))) / (1 + n_perm)
    samples = [PredictiveSample(str(i), g) for i, g in enumerate(groups)]
    return TestReport((), samples, float(obs), p, n_perm, [p], [float(obs)], null)


def baseline_covariates(ds: Dataset):
    """Continuous columns at their median, categorical at the modal level
    (lowest code on ties)."""
    x = np.empty(ds.p)
    for j, col in enumerate(ds.columns):
        v = ds.X[:, j]
        if col.is_categorical:
            x[j] = float(np.argmax(np.bincount(v.astype(np.int64), minlength=len(col.levels))))
        else:
            x[j] = float(np.median(v))
    return x


def level_configurations(columns, view: DiscretizedView, ds: Dataset, base=None):
    """One :class:`CovariateConfig` per level combination of ``columns``;
    continuous levels map to their within-bin medians."""
    base = baseline_covariates(ds) if base is None else np.asarray(base, float)
    idx = []
    for name in columns:
        try:
            idx.append(ds.index(name))
        except KeyError:
            raise KeyError(f"unknown column {name!r}") from None
    choices = []
    for name, j in zip(columns, idx):
        levels = view.levels[j]
        if ds.columns[j].is_categorical:
            vals = [float(v) for v in range(len(levels))]
        else:
            vals = [float(v) for v in view.representatives[name]]
        choices.append(list(zip(levels, vals)))
    out = []
    for combo in itertools.product(*choices):
        x = base.copy()
        for j, (_, v) in zip(idx, combo):
            x[j] = v
        out.append(CovariateConfig(tuple(x), tuple((name, lv) for name, (lv, _) in zip(columns, combo))))
    return out


def test_interaction(columns, engine: PredictiveEngine, view: DiscretizedView, n_draws=50,
                     n_perm=500, replications=1, rng=None, depth=None, c=1.0):
    """Test equality of the predictive densities over all level
    combinations of ``columns`` (others held at their baseline).

    Each replication uses fresh predictive draws from the same retained
    states; the reported p-value is the average over replications.
    """
    if len(columns) < 1:
        raise ValueError("need at least one column")
    if n_draws < 50:
        raise ValueError(f"need at least 50 predictive draws per group, got {n_draws}")
    rng = rng if rng is not None else np.random.default_rng()
    configs = level_configurations(columns, view, engine.ds)
    reps_p, reps_s = [], []
    first = None
    for _ in range(replications):
        samples = []
        for cfg in configs:
            d, states = engine.sample(cfg.values, n_draws, rng)
            samples.append(PredictiveSample(cfg.label, d, states))
        rep = permutation_test([s.draws for s in samples], n_perm, rng, depth, c)
        reps_p.append(rep.p_value)
        reps_s.append(rep.statistic)
        if first is None:
            first = (samples, rep.null_statistics)
    return TestReport(tuple(columns), first[0], float(np.mean(reps_s)), float(np.mean(reps_p)),
                      n_perm, reps_p, reps_s, first[1])


test_interaction.__test__ = False


def density_grid(samples, n_points=512, pad=3.0):
    """Gaussian-KDE evaluations of each sample on a shared grid."""
    pooled = np.concatenate([np.asarray(s.draws, float) for s in samples])
    spread = pooled.std() if pooled.size > 1 and pooled.std() > 0 else 1.0
    lo, hi = pooled.min() - pad * spread * 0.25, pooled.max() + pad * spread * 0.25
    grid = np.linspace(lo, hi, n_points)
    cols = []
    for s in samples:
        d = np.asarray(s.draws, float)
        if d.size > 1 and d.std() > 0:
            cols.append(stats.gaussian_kde(d)(grid))
        else:
            cols.append(np.where(np.isclose(grid, d.mean(), atol=(hi - lo) / n_points), 1.0, 0.0))
    return grid, np.column_stack(cols)


def write_density_grid(path, samples, n_points=512, delimiter=","):
    grid, dens = density_grid(samples, n_points)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(["x"] + [s.group for s in samples])
        for i in range(grid.size):
            w.writerow([repr(float(grid[i]))] + [repr(float(v)) for v in dens[i]])
    return grid, dens
