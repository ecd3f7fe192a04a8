"""Covariate-dependent partition prior (PPMx).

The prior mass of a partition is proportional to a product over clusters of
a cohesion ``c(S)`` and a similarity ``g(X*_S)``; everything here works on
the log scale and is unnormalized.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import lgamma, log, pi

import numpy as np

LOG_2PI = log(2.0 * pi)


@dataclass(frozen=True)
class CohesionSpec:
    """``kind="dp"`` gives ``c(S) = M (|S|-1)!``; ``kind="uniform"`` gives 1."""

    kind: str = "dp"
    M: float = 1.0

    def __post_init__(self):
        if self.kind not in ("dp", "uniform"):
            raise ValueError(f"unknown cohesion kind {self.kind!r}")
        if not self.M > 0:
            raise ValueError("cohesion mass M must be positive")

    @property
    def code(self):
        return 0 if self.kind == "dp" else 1


@dataclass(frozen=True)
class SimilarityHyper:
    """Auxiliary-model hyperparameters.

    Continuous columns: ``m | s2 ~ N(m0, k0 * s2)``, ``s2 ~ IG(shape=nu0,
    rate=kappa0)``. Categorical columns: symmetric Dirichlet with
    ``dirichlet_shape`` on every level.
    """

    m0: float = 0.0
    k0: float = 0.5
    nu0: float = 1.0
    kappa0: float = 2.0
    dirichlet_shape: float = 0.1

    def __post_init__(self):
        if not np.isfinite(self.m0):
            raise ValueError("m0 must be finite")
        for name in ("k0", "nu0", "kappa0", "dirichlet_shape"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class Partition:
    """Cluster labels ``1..k`` for ``m`` units, contiguous."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64)
        if lab.ndim != 1 or lab.size == 0:
            raise ValueError("labels must be a nonempty 1-d array")
        if lab.min() != 1 or set(np.unique(lab)) != set(range(1, lab.max() + 1)):
            raise ValueError("labels must be contiguous starting at 1")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @classmethod
    def from_labels(cls, labels):
        """Relabel any integer labelling to contiguous labels in order of
        first appearance."""
        _, first, inv = np.unique(np.asarray(labels), return_index=True, return_inverse=True)
        order = np.argsort(np.argsort(first))
        return cls(order[inv] + 1)

    @property
    def m(self):
        return self.labels.size

    @property
    def k(self):
        return int(self.labels.max())

    @property
    def sizes(self):
        return np.bincount(self.labels, minlength=self.k + 1)[1:]

    def clusters(self):
        return [np.flatnonzero(self.labels == j) for j in range(1, self.k + 1)]

    def canonical(self):
        """Hashable label-invariant key."""
        return tuple(Partition.from_labels(self.labels).labels.tolist())


def log_cohesion(size, spec: CohesionSpec):
    if size < 1:
        raise ValueError("cluster size must be at least 1")
    if spec.kind == "uniform":
        return 0.0
    return log(spec.M) + lgamma(size)


def _nig_log_marginal(n, s, ss, m0, k0, nu0, kappa0):
    """Closed-form log marginal from sufficient statistics (count, sum,
    sum of squares)."""
    if n == 0:
        return 0.0
    lam0 = 1.0 / k0
    lamn = lam0 + n
    xbar = s / n
    sse = max(ss - s * xbar, 0.0)
    nun = nu0 + 0.5 * n
    kapn = kappa0 + 0.5 * (sse + lam0 * n * (xbar - m0) ** 2 / lamn)
    return (-0.5 * n * LOG_2PI + 0.5 * log(lam0 / lamn)
            + nu0 * log(kappa0) - nun * log(kapn) + lgamma(nun) - lgamma(nu0))


def log_similarity_continuous(values, h: SimilarityHyper):
    """Log marginal density of ``values`` under the Normal/Normal-Inverse-Gamma
    auxiliary model."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("values must be nonempty")
    # centering first keeps the sum of squares accurate for large offsets
    c = float(x.mean())
    xc = x - c
    return _nig_log_marginal(x.size, float(xc.sum()), float(xc @ xc),
                             h.m0 - c, h.k0, h.nu0, h.kappa0)


def log_predictive_continuous(x, values, h: SimilarityHyper):
    """Log one-step predictive density of ``x`` given ``values``.

    This is the Student-t predictive of the auxiliary model, written out
    directly rather than as a difference of marginals.
    """
    v = np.asarray(values, dtype=float)
    n = v.size
    lam0 = 1.0 / h.k0
    lamn = lam0 + n
    if n:
        xbar = v.mean()
        sse = float(((v - xbar) ** 2).sum())
    else:
        xbar, sse = 0.0, 0.0
    mn = (lam0 * h.m0 + n * xbar) / lamn
    an = h.nu0 + 0.5 * n
    bn = h.kappa0 + 0.5 * (sse + lam0 * n * (xbar - h.m0) ** 2 / lamn)
    df = 2.0 * an
    scale2 = bn * (lamn + 1.0) / (an * lamn)
    z2 = (x - mn) ** 2 / scale2
    return (lgamma(0.5 * (df + 1)) - lgamma(0.5 * df) - 0.5 * log(df * pi * scale2)
            - 0.5 * (df + 1) * np.log1p(z2 / df))


def log_similarity_categorical(counts, shape):
    """Dirichlet-multinomial marginal of a sequence of category draws, i.e.
    without the multinomial coefficient."""
    c = np.asarray(counts, dtype=float)
    if np.any(c < 0):
        raise ValueError("counts must be nonnegative")
    if c.sum() < 1:
        raise ValueError("counts must sum to at least 1")
    L = c.size
    return float(sum(lgamma(shape + ci) - lgamma(shape) for ci in c)
                 + lgamma(L * shape) - lgamma(L * shape + c.sum()))


def log_similarity_cluster(columns, kinds, h: SimilarityHyper):
    """Product-form similarity of one cluster.

    ``columns`` is a list of per-column value arrays; ``kinds`` gives, per
    column, ``None`` for continuous or the number of levels for categorical
    (values are then integer codes).
    """
    if len(columns) != len(kinds):
        raise ValueError("columns and kinds differ in length")
    lengths = {len(col) for col in columns}
    if len(lengths) > 1:
        raise ValueError("column lengths differ")
    total = 0.0
    for col, kind in zip(columns, kinds):
        if kind is None:
            total += log_similarity_continuous(col, h)
        else:
            counts = np.bincount(np.asarray(col, dtype=np.int64), minlength=kind)
            total += log_similarity_categorical(counts, h.dirichlet_shape)
    return total


def column_kinds(ds):
    return [None if not c.is_categorical else len(c.levels) for c in ds.columns]


def log_partition_prior(rho: Partition, ds, spec: CohesionSpec, h: SimilarityHyper):
    """Unnormalized log prior mass of ``rho`` given the covariates of ``ds``."""
    if rho.m != ds.m:
        raise ValueError(f"partition covers {rho.m} units, dataset has {ds.m}")
    kinds = column_kinds(ds)
    total = 0.0
    for members in rho.clusters():
        total += log_cohesion(members.size, spec)
        total += log_similarity_cluster([ds.X[members, j] for j in range(ds.p)], kinds, h)
    return total


def set_partitions(m):
    """All set partitions of ``range(m)`` as restricted-growth label arrays
    (labels start at 1)."""
    out = []

    def rec(prefix, kmax):
        if len(prefix) == m:
            out.append(np.array(prefix, dtype=np.int64))
            return
        for lab in range(1, kmax + 2):
            rec(prefix + [lab], max(kmax, lab))

    rec([], 0)
    return out
