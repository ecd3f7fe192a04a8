"""MCMC for the Gaussian PPMx mixture and its latent-ordinal variant.

Labels are updated with an auxiliary-parameter Gibbs scan (empty clusters
are represented by ``n_aux`` fresh draws from the base measure), cluster
means by their conjugate normal full conditional, cluster and hyper standard
deviations by reflected random-walk Metropolis.
"""

from __future__ import annotations

import contextlib
import gzip
import io
import json
import time
import warnings
from dataclasses import dataclass, field
from math import lgamma, log

import numpy as np
from scipy import special

from . import _kernels
from .config import McmcConfig, PriorConfig, canonical_json, config_hash, make_rng
from .core import Dataset
from .ppmx import Partition

DRAWS_FORMAT = "raid-draws"
DRAWS_VERSION = 1
TARGET_ACCEPT = 0.44


@dataclass
class ChainState:
    """Mutable state of one chain. ``labels`` are 0-based and contiguous;
    ``mu``/``sig`` have one entry per cluster."""

    labels: np.ndarray
    mu: np.ndarray
    sig: np.ndarray
    mu0: float
    sig0: float
    z: np.ndarray = None

    @property
    def k(self):
        return self.mu.size

    def copy(self):
        return ChainState(self.labels.copy(), self.mu.copy(), self.sig.copy(), self.mu0,
                          self.sig0, None if self.z is None else self.z.copy())


@dataclass
class _Tuning:
    log_step_sig: float = log(0.3)
    log_step_sig0: float = log(1.0)
    acc_sig: int = 0
    n_sig: int = 0
    acc_sig0: int = 0
    n_sig0: int = 0

    def rates(self):
        return (self.acc_sig / max(self.n_sig, 1), self.acc_sig0 / max(self.n_sig0, 1))

    def reset_counts(self):
        self.acc_sig = self.n_sig = self.acc_sig0 = self.n_sig0 = 0


class _ModelData:
    """Covariate blocks and constants precomputed once per chain."""

    def __init__(self, ds: Dataset, prior: PriorConfig):
        self.Xc, self.Xq, self.nlev = ds.covariate_blocks()
        self.m = ds.m
        h = prior.similarity
        n = np.arange(ds.m + 2)
        self.lg_ratio = np.array([lgamma(h.nu0 + 0.5 * k + 0.5) - lgamma(h.nu0 + 0.5 * k) for k in n])
        self.ordinal = ds.response_kind == "ordinal"
        self.grades = ds.y.astype(np.int64) if self.ordinal else None
        self.y = None if self.ordinal else np.ascontiguousarray(ds.y, dtype=np.float64)
        if self.ordinal:
            bounds = np.concatenate([[-np.inf], prior.cutpoints, [np.inf]])
            if ds.n_grades != bounds.size - 1:
                raise ValueError(f"{ds.n_grades} grades need {ds.n_grades - 1} cutpoints, "
                                 f"got {len(prior.cutpoints)}")
            self.lower = bounds[self.grades]
            self.upper = bounds[self.grades + 1]


def gibbs_update_labels(state: ChainState, data: _ModelData, prior: PriorConfig, rng,
                        n_aux=3, likelihood=True):
    """Reassign every unit in turn; empty clusters are pruned and labels kept
    contiguous."""
    m = data.m
    y = state.z if data.ordinal else data.y
    cap = m + 1
    mu = np.zeros(cap)
    sig = np.ones(cap)
    mu[:state.k] = state.mu
    sig[:state.k] = state.sig
    labels = state.labels.astype(np.int64).copy()
    normals = rng.standard_normal((m, n_aux))
    uniforms = rng.random((m, n_aux))
    u_choice = rng.random(m)
    coh = prior.cohesion
    h = prior.similarity
    k = _kernels.sweep_labels(
        y, data.Xc, data.Xq, data.nlev, labels, mu, sig, state.k,
        coh.code, log(coh.M), h.m0, h.k0, h.nu0, h.kappa0, h.dirichlet_shape,
        state.mu0, state.sig0, prior.A, n_aux, likelihood, data.lg_ratio,
        normals, uniforms, u_choice)
    state.labels = labels
    state.mu = mu[:k].copy()
    state.sig = sig[:k].copy()
    return state


def _cluster_sums(labels, y, k):
    n = np.bincount(labels, minlength=k).astype(float)
    s = np.bincount(labels, weights=y, minlength=k)
    return n, s


def update_cluster_params(state: ChainState, y, prior: PriorConfig, rng, tuning=None):
    """Conjugate refresh of each ``mu*`` given ``sig*``, then one reflected
    log-scale random-walk Metropolis step for each ``sig*`` on ``(0, A)``."""
    tuning = tuning or _Tuning()
    k = state.k
    n, s = _cluster_sums(state.labels, y, k)
    prec = 1.0 / state.sig0 ** 2 + n / state.sig ** 2
    mean = (state.mu0 / state.sig0 ** 2 + s / state.sig ** 2) / prec
    state.mu = mean + rng.standard_normal(k) / np.sqrt(prec)

    resid = y - state.mu[state.labels]
    ss = np.bincount(state.labels, weights=resid * resid, minlength=k)
    log_A = log(prior.A)
    cur = np.log(state.sig)
    prop = cur + np.exp(tuning.log_step_sig) * rng.standard_normal(k)
    prop = np.where(prop > log_A, 2.0 * log_A - prop, prop)
    sp = np.exp(prop)

    # target on log sig: likelihood x Unif(0, A) x Jacobian sig
    def logpost(ls, sg):
        return -(n - 1.0) * ls - 0.5 * ss / sg ** 2

    log_ratio = logpost(prop, sp) - logpost(cur, state.sig)
    accept = np.log(rng.random(k)) < log_ratio
    state.sig = np.where(accept, sp, state.sig)
    tuning.acc_sig += int(accept.sum())
    tuning.n_sig += k
    return state


def _reflect(x, lo, hi):
    width = hi - lo
    r = np.mod(x - lo, 2.0 * width)
    return lo + np.where(r > width, 2.0 * width - r, r)


def update_hyperparams(state: ChainState, prior: PriorConfig, rng, tuning=None):
    """``mu0`` from its conjugate normal full conditional given the cluster
    means; ``sig0`` by reflected random-walk Metropolis on ``(0, sig0_upper)``."""
    tuning = tuning or _Tuning()
    if prior.fixed_mu0 is not None:
        state.mu0 = float(prior.fixed_mu0)
    else:
        k = state.k
        prec = 1.0 / prior.mu0_sd ** 2 + k / state.sig0 ** 2
        mean = (prior.mu0_mean / prior.mu0_sd ** 2 + state.mu.sum() / state.sig0 ** 2) / prec
        state.mu0 = float(mean + rng.standard_normal() / np.sqrt(prec))
    if prior.fixed_sig0 is not None:
        state.sig0 = float(prior.fixed_sig0)
        return state
    upper = prior.sig0_upper
    prop = float(_reflect(state.sig0 + np.exp(tuning.log_step_sig0) * rng.standard_normal(), 0.0, upper))
    if prop <= 0.0:
        prop = 1e-12

    def logpost(s0):
        return -state.k * log(s0) - 0.5 * np.sum((state.mu - state.mu0) ** 2) / s0 ** 2

    if log(rng.random()) < logpost(prop) - logpost(state.sig0):
        state.sig0 = prop
        tuning.acc_sig0 += 1
    tuning.n_sig0 += 1
    return state


def sample_truncated_normal(mean, sd, lower, upper, rng):
    """Inverse-CDF draws from N(mean, sd^2) restricted to (lower, upper].

    Intervals lying in the right tail are reflected to the left tail and the
    CDF is handled on the log scale, so far-tail intervals stay accurate.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    a = (np.asarray(lower, dtype=float) - mean) / sd
    b = (np.asarray(upper, dtype=float) - mean) / sd
    a, b = np.broadcast_arrays(a, b)
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    log_hi = special.log_ndtr(hi)
    log_lo = special.log_ndtr(lo)
    v = rng.random(lo.shape)
    # log(Phi(lo) + v * (Phi(hi) - Phi(lo)))
    log_u = log_hi + np.log(v + (1.0 - v) * np.exp(log_lo - log_hi))
    x = special.ndtri_exp(log_u)
    x = np.clip(x, lo, hi)
    x = np.where(flip, -x, x)
    return mean + sd * x


def update_latent_scores(state: ChainState, data: _ModelData, rng):
    """Redraw every latent score from its cluster normal truncated to the
    interval of its observed grade."""
    mu = state.mu[state.labels]
    sd = state.sig[state.labels]
    z = sample_truncated_normal(mu, sd, data.lower, data.upper, rng)
    # clip guards the closed upper end against rounding
    state.z = np.minimum(np.maximum(z, np.nextafter(data.lower, np.inf)), data.upper)
    return state


@dataclass(eq=False)
class PosteriorDraws:
    """Retained chain states.

    ``labels`` is a (T, m) array of 1-based contiguous labels; ``mu``/``sig``
    are length-T lists of per-cluster arrays.
    """

    labels: np.ndarray
    mu: list
    sig: list
    mu0: np.ndarray
    sig0: np.ndarray
    z: np.ndarray = None
    config: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def m(self):
        return self.labels.shape[1]

    def partition(self, t):
        return Partition(self.labels[t])

    def n_clusters(self):
        return self.labels.max(axis=1)

    @property
    def checksum(self):
        return config_hash(self.config)

    def to_jsonl(self, path):
        """Write a header record followed by one record per state. Output is
        a pure function of the draws and config (no timings)."""
        header = {
            "format": DRAWS_FORMAT,
            "version": DRAWS_VERSION,
            "n_draws": len(self),
            "m": self.m,
            "config": self.config,
            "checksum": self.checksum,
            "acceptance": self.meta.get("acceptance"),
        }
        with _open_text_out(path) as fh:
            fh.write(canonical_json(header) + "\n")
            for t in range(len(self)):
                rec = {
                    "t": t,
                    "labels": self.labels[t].tolist(),
                    "mu": self.mu[t].tolist(),
                    "sig": self.sig[t].tolist(),
                    "mu0": float(self.mu0[t]),
                    "sig0": float(self.sig0[t]),
                }
                if self.z is not None:
                    rec["z"] = self.z[t].tolist()
                fh.write(canonical_json(rec) + "\n")

    @classmethod
    def from_jsonl(cls, path):
        opener = gzip.open if str(path).endswith(".gz") else open
        with opener(path, "rt", encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != DRAWS_FORMAT:
                raise ValueError(f"{path}: not a draws file")
            if header.get("version") != DRAWS_VERSION:
                raise ValueError(f"{path}: unsupported draws version {header.get('version')}")
            if header["checksum"] != config_hash(header["config"]):
                raise ValueError(f"{path}: config checksum mismatch")
            recs = [json.loads(line) for line in fh if line.strip()]
        if len(recs) != header["n_draws"]:
            raise ValueError(f"{path}: expected {header['n_draws']} draws, found {len(recs)}")
        m = header["m"]
        labels = np.array([r["labels"] for r in recs], dtype=np.int64).reshape(len(recs), m)
        z = np.array([r["z"] for r in recs]) if recs and "z" in recs[0] else None
        return cls(labels, [np.array(r["mu"]) for r in recs], [np.array(r["sig"]) for r in recs],
                   np.array([r["mu0"] for r in recs]), np.array([r["sig0"] for r in recs]), z,
                   header["config"], {"acceptance": header.get("acceptance")})


@contextlib.contextmanager
def _open_text_out(path):
    if not str(path).endswith(".gz"):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh
        return
    # fixed mtime and no embedded name keep gzip output reproducible
    with open(path, "wb") as raw, \
            gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as gz, \
            io.TextIOWrapper(gz, encoding="utf-8", newline="\n") as fh:
        yield fh


def _initial_state(data: _ModelData, prior: PriorConfig, rng):
    m = data.m
    mu0 = prior.fixed_mu0 if prior.fixed_mu0 is not None else prior.mu0_mean
    sig0 = prior.fixed_sig0 if prior.fixed_sig0 is not None else min(1.0, prior.sig0_upper / 2)
    z = None
    if data.ordinal:
        mid = np.where(np.isfinite(data.lower) & np.isfinite(data.upper),
                       0.5 * (data.lower + data.upper),
                       np.where(np.isfinite(data.lower), data.lower + 0.1, data.upper - 0.1))
        z = mid.astype(float)
        y = z
    else:
        y = data.y
    sd = float(np.std(y)) if m > 1 else 1.0
    sig = min(max(sd, 1e-3), 0.5 * prior.A)
    return ChainState(np.zeros(m, dtype=np.int64), np.array([float(np.mean(y))]),
                      np.array([sig]), float(mu0), float(sig0), z)


def run_mcmc(ds: Dataset, cfg: McmcConfig, callback=None) -> PosteriorDraws:
    """Run one chain and keep every ``thin``-th state after burn-in.

    A sweep updates labels, cluster parameters, hyperparameters and, for
    ordinal responses, the latent scores, in that order. During burn-in the
    Metropolis step sizes adapt toward a 0.44 acceptance rate.
    """
    if ds.continuous_idx and not ds.standardized:
        warnings.warn("continuous covariates are not standardized", stacklevel=2)
    prior = cfg.prior
    rng = make_rng(cfg.seed)
    data = _ModelData(ds, prior)
    state = _initial_state(data, prior, rng)
    tuning = _Tuning()
    keep_labels, keep_mu, keep_sig, keep_mu0, keep_sig0, keep_z = [], [], [], [], [], []
    started = time.perf_counter()
    for it in range(cfg.n_iter):
        gibbs_update_labels(state, data, prior, rng, cfg.n_aux, cfg.likelihood)
        y = state.z if data.ordinal else data.y
        update_cluster_params(state, y, prior, rng, tuning)
        update_hyperparams(state, prior, rng, tuning)
        if data.ordinal:
            update_latent_scores(state, data, rng)
        if cfg.adapt and it < cfg.burn_in and (it + 1) % 50 == 0:
            r_sig, r_sig0 = tuning.rates()
            tuning.log_step_sig += 0.5 * (r_sig - TARGET_ACCEPT) if tuning.n_sig else 0.0
            tuning.log_step_sig0 += 0.5 * (r_sig0 - TARGET_ACCEPT) if tuning.n_sig0 else 0.0
            tuning.reset_counts()
        if it + 1 == cfg.burn_in:
            tuning.reset_counts()
        if it >= cfg.burn_in and (it - cfg.burn_in + 1) % cfg.thin == 0:
            keep_labels.append(Partition.from_labels(state.labels).labels)
            # reorder parameters to match first-appearance labels
            order = _first_appearance(state.labels, state.k)
            keep_mu.append(state.mu[order].copy())
            keep_sig.append(state.sig[order].copy())
            keep_mu0.append(state.mu0)
            keep_sig0.append(state.sig0)
            if data.ordinal:
                keep_z.append(state.z.copy())
        if callback is not None:
            callback(it, state)
    r_sig, r_sig0 = tuning.rates()
    return PosteriorDraws(
        labels=np.array(keep_labels, dtype=np.int64).reshape(len(keep_labels), ds.m),
        mu=keep_mu, sig=keep_sig,
        mu0=np.array(keep_mu0), sig0=np.array(keep_sig0),
        z=np.array(keep_z) if data.ordinal else None,
        config=cfg.to_dict(),
        meta={"acceptance": {"sig_star": round(r_sig, 6), "sig0": round(r_sig0, 6)},
              "elapsed": time.perf_counter() - started,
              "final_step": {"sig_star": float(np.exp(tuning.log_step_sig)),
                             "sig0": float(np.exp(tuning.log_step_sig0))}},
    )


def _first_appearance(labels, k):
    _, first = np.unique(labels, return_index=True)
    return np.argsort(first) if first.size == k else np.arange(k)


def log_likelihood_matrix(draws: PosteriorDraws, ds: Dataset, prior: PriorConfig = None):
    """(T, m) array of ``log f(y_i | state_t)``; for ordinal responses the
    interval probability of the observed grade."""
    prior = prior or PriorConfig.from_dict(draws.config.get("prior"))
    T, m = draws.labels.shape
    out = np.empty((T, m))
    if ds.response_kind == "ordinal":
        bounds = np.concatenate([[-np.inf], prior.cutpoints, [np.inf]])
        g = ds.y.astype(np.int64)
        lo, hi = bounds[g], bounds[g + 1]
    for t in range(T):
        lab = draws.labels[t] - 1
        mu = draws.mu[t][lab]
        sd = draws.sig[t][lab]
        if ds.response_kind == "ordinal":
            out[t] = _log_interval_prob((lo - mu) / sd, (hi - mu) / sd)
        else:
            d = (ds.y - mu) / sd
            out[t] = -0.5 * np.log(2 * np.pi) - np.log(sd) - 0.5 * d * d
    return out


def _log_interval_prob(a, b):
    # log(Phi(b) - Phi(a)), computed on the side away from the upper tail
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    lb = special.log_ndtr(hi)
    la = special.log_ndtr(lo)
    with np.errstate(divide="ignore"):
        return lb + np.log1p(-np.exp(la - lb))


def compute_lpml(draws: PosteriorDraws, ds: Dataset, prior: PriorConfig = None, min_draws=100,
                 return_cpo=False):
    """Log pseudo marginal likelihood: sum over units of the log harmonic
    mean (over draws) of the likelihood."""
    if len(draws) < min_draws:
        raise ValueError(f"LPML needs at least {min_draws} draws, got {len(draws)}")
    ll = log_likelihood_matrix(draws, ds, prior)
    T = ll.shape[0]
    log_cpo = -(special.logsumexp(-ll, axis=0) - log(T))
    bad = np.flatnonzero(~np.isfinite(log_cpo))
    if bad.size:
        raise FloatingPointError(f"non-finite CPO for observations {bad.tolist()}")
    lpml = float(log_cpo.sum())
    return (lpml, log_cpo) if return_cpo else lpml
