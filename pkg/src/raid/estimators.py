"""scikit-learn style front ends for the partition model and the full
interaction-discovery procedure."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .config import McmcConfig, PriorConfig, make_rng
from .core import ColumnSpec, Dataset
from .pipeline import PipelineConfig, prepare, run_pipeline
from .ppmx import CohesionSpec, SimilarityHyper
from .ptest import PredictiveEngine, grade_probabilities
from .sampler import compute_lpml, run_mcmc


def _columns_from_array(X, categorical_features, feature_names=None):
    """Column specs and integer-coded X. Categorical columns keep their
    sorted distinct values as level names."""
    p = X.shape[1]
    names = list(feature_names) if feature_names is not None else [f"X{j + 1}" for j in range(p)]
    cat = set()
    for c in categorical_features or ():
        cat.add(names.index(c) if isinstance(c, str) else int(c))
    cols, Xc, levels = [], X.astype(float).copy(), {}
    for j in range(p):
        if j in cat:
            vals = np.unique(X[:, j])
            levels[j] = vals
            Xc[:, j] = np.searchsorted(vals, X[:, j])
            cols.append(ColumnSpec.categorical(names[j], [format(v, "g") for v in vals]))
        else:
            cols.append(ColumnSpec.continuous(names[j]))
    return tuple(cols), Xc, levels


class _PPMxBase(BaseEstimator):
    def __init__(self, categorical_features=(), cohesion="dp", M=1.0, A=1.0, m0=0.0, k0=0.5,
                 nu0=1.0, kappa0=2.0, dirichlet_shape=0.1, n_iter=2000, burn_in=1000, thin=2,
                 n_aux=3, random_state=0):
        self.categorical_features = categorical_features
        self.cohesion = cohesion
        self.M = M
        self.A = A
        self.m0 = m0
        self.k0 = k0
        self.nu0 = nu0
        self.kappa0 = kappa0
        self.dirichlet_shape = dirichlet_shape
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.n_aux = n_aux
        self.random_state = random_state

    def _prior(self, **extra):
        return PriorConfig(A=self.A, cohesion=CohesionSpec(self.cohesion, self.M),
                           similarity=SimilarityHyper(self.m0, self.k0, self.nu0, self.kappa0,
                                                      self.dirichlet_shape), **extra)

    def _mcmc(self, prior):
        seed = self.random_state if isinstance(self.random_state, (int, np.integer)) else 0
        return McmcConfig(n_iter=self.n_iter, burn_in=self.burn_in, thin=self.thin,
                          n_aux=self.n_aux, seed=int(seed), prior=prior)

    def _dataset(self, X, y, response_kind="continuous", n_grades=None):
        names = getattr(X, "columns", None)
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        cols, Xc, levels = _columns_from_array(X, self.categorical_features, names)
        self.n_features_in_ = X.shape[1]
        if names is not None:
            self.feature_names_in_ = np.asarray(names, dtype=object)
        self.levels_ = levels
        return Dataset(cols, Xc, y, response_kind, n_grades)

    def _encode(self, X):
        """Rows of ``X`` on the fitted dataset's scale."""
        check_is_fitted(self, "draws_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        out = X.copy()
        for j, vals in self.levels_.items():
            codes = np.searchsorted(vals, X[:, j])
            codes = np.clip(codes, 0, vals.size - 1)
            if np.any(vals[codes] != X[:, j]):
                raise ValueError(f"column {j} has a level not seen during fit")
            out[:, j] = codes
        for name, t in self.dataset_.transforms.items():
            if name != "__response__":
                j = self.dataset_.index(name)
                out[:, j] = t.apply(out[:, j])
        return out

    @property
    def lpml_(self):
        check_is_fitted(self, "draws_")
        if self._lpml is None:
            self._lpml = compute_lpml(self.draws_, self.dataset_, self.prior_)
        return self._lpml

    def _fit_chain(self, ds, prior, standardize_response):
        fitted = prepare(ds, PipelineConfig(standardize_response=standardize_response))
        self.prior_ = prior
        self.dataset_ = fitted
        self.draws_ = run_mcmc(fitted, self._mcmc(prior))
        self.engine_ = PredictiveEngine(self.draws_, fitted, prior)
        self.n_clusters_mean_ = float(np.mean(self.draws_.n_clusters()))
        self._lpml = None
        return self


class PPMxRegressor(RegressorMixin, _PPMxBase):
    """Gaussian mixture regression with a covariate-dependent partition prior.

    ``predict`` returns the posterior predictive mean; ``sample_predictive``
    draws from the posterior predictive at each row.
    """

    def __init__(self, categorical_features=(), cohesion="dp", M=1.0, A=1.0, m0=0.0, k0=0.5,
                 nu0=1.0, kappa0=2.0, dirichlet_shape=0.1, n_iter=2000, burn_in=1000, thin=2,
                 n_aux=3, standardize_response=True, random_state=0):
        super().__init__(categorical_features, cohesion, M, A, m0, k0, nu0, kappa0,
                         dirichlet_shape, n_iter, burn_in, thin, n_aux, random_state)
        self.standardize_response = standardize_response

    def fit(self, X, y):
        ds = self._dataset(X, y)
        return self._fit_chain(ds, self._prior(), self.standardize_response)

    def _to_response_scale(self, v):
        t = self.dataset_.transforms.get("__response__")
        return t.inverse(v) if t is not None else v

    def predict(self, X):
        Xe = self._encode(X)
        eng, d = self.engine_, self.draws_
        out = np.empty(Xe.shape[0])
        for i, x0 in enumerate(Xe):
            acc = 0.0
            for t in range(len(d)):
                p = eng.allocation_probs(t, x0)
                acc += p[:-1] @ d.mu[t] + p[-1] * d.mu0[t]
            out[i] = acc / len(d)
        return self._to_response_scale(out)

    def sample_predictive(self, X, n_draws=100, random_state=None):
        """(n_rows, n_draws) array of posterior predictive draws."""
        Xe = self._encode(X)
        rng = make_rng(0 if random_state is None else random_state)
        out = np.array([self.engine_.sample(x0, n_draws, rng)[0] for x0 in Xe])
        return self._to_response_scale(out)


class PPMxOrdinalClassifier(ClassifierMixin, _PPMxBase):
    """Latent-score ordinal model: grades arise by thresholding a mixture
    of normals at fixed ``cutpoints``."""

    def __init__(self, categorical_features=(), cohesion="dp", M=1.0, A=0.1, m0=0.0, k0=0.5,
                 nu0=1.0, kappa0=2.0, dirichlet_shape=0.1, n_iter=2000, burn_in=1000, thin=2,
                 n_aux=3, cutpoints=(0.0, 1 / 3, 2 / 3, 1.0), random_state=0):
        super().__init__(categorical_features, cohesion, M, A, m0, k0, nu0, kappa0,
                         dirichlet_shape, n_iter, burn_in, thin, n_aux, random_state)
        self.cutpoints = cutpoints

    def fit(self, X, y):
        n_grades = len(self.cutpoints) + 1
        y = np.asarray(y)
        self.classes_ = np.arange(n_grades)
        ds = self._dataset(X, y, "ordinal", n_grades)
        return self._fit_chain(ds, self._prior(cutpoints=tuple(self.cutpoints)), False)

    def predict_proba(self, X):
        Xe = self._encode(X)
        rng = make_rng(0)
        return np.array([grade_probabilities(self.engine_, x0, rng) for x0 in Xe])

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class RAIDInteractionDetector(_PPMxBase):
    """Partition model, association rules and predictive-density tests.

    After ``fit``: ``pair_summaries_`` (ranked rule summaries),
    ``candidates_`` (pairs sent to testing), ``reports_`` (test report per
    candidate) and ``interactions_`` (candidates with p below ``p_cut``).
    """

    def __init__(self, categorical_features=(), cohesion="dp", M=1.0, A=1.0, m0=0.0, k0=0.5,
                 nu0=1.0, kappa0=2.0, dirichlet_shape=0.1, n_iter=2000, burn_in=1000, thin=2,
                 n_aux=3, bins=2, min_support=0.25, min_confidence=0.5, min_cluster=10,
                 candidate_mode="top_pair", top_pair_score="max", detect_threshold=0.5, n_pred=50,
                 n_perm=500, p_cut=0.01, standardize_response=True, random_state=0):
        super().__init__(categorical_features, cohesion, M, A, m0, k0, nu0, kappa0,
                         dirichlet_shape, n_iter, burn_in, thin, n_aux, random_state)
        self.bins = bins
        self.min_support = min_support
        self.min_confidence = min_confidence
        self.min_cluster = min_cluster
        self.candidate_mode = candidate_mode
        self.top_pair_score = top_pair_score
        self.detect_threshold = detect_threshold
        self.n_pred = n_pred
        self.n_perm = n_perm
        self.p_cut = p_cut
        self.standardize_response = standardize_response

    def fit(self, X, y):
        ds = self._dataset(X, y)
        prior = self._prior()
        cfg = PipelineConfig(
            mcmc=self._mcmc(prior), standardize_response=self.standardize_response,
            bins=self.bins, min_support=self.min_support, min_confidence=self.min_confidence,
            min_cluster=self.min_cluster, candidate_mode=self.candidate_mode,
            top_pair_score=self.top_pair_score,
            detect_threshold=self.detect_threshold, n_pred=self.n_pred, n_perm=self.n_perm,
            p_cut=self.p_cut)
        res = run_pipeline(ds, cfg)
        self.prior_ = prior
        self.dataset_ = res.dataset
        self.draws_ = res.draws
        self.pair_summaries_ = res.summaries
        self.candidates_ = res.candidates
        self.reports_ = res.reports
        self.interactions_ = res.declared
        self._lpml = None
        return self
