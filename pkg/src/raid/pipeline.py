"""The three RAID stages chained together: fit the partition model, mine
association rules over the retained partitions, test the candidate pairs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .config import ConfigError, McmcConfig, make_rng
from .core import Dataset, discretize, standardize
from .ptest import PredictiveEngine, test_interaction
from .rules import (aggregate, filter_pairs, mine_draws, top_pair_candidates,
                    top_pair_per_iterate)
from .sampler import PosteriorDraws, run_mcmc

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    standardize_response: bool = True
    bins: int = 2
    min_support: float = 0.25
    min_confidence: float = 0.5
    min_cluster: int = 10
    max_order: int = 2
    candidate_mode: str = "top_pair"
    top_pair_min_fraction: float = 0.1
    top_pair_score: str = "max"
    detect_threshold: float = 0.5
    filter_cols: tuple = ()
    n_pred: int = 50
    n_perm: int = 500
    replications: int = 1
    p_cut: float = 0.01

    def __post_init__(self):
        if self.bins not in (2, 3):
            raise ConfigError("pipeline.bins", "must be 2 or 3")
        if self.candidate_mode not in ("top_pair", "threshold"):
            raise ConfigError("pipeline.candidate_mode", "must be 'top_pair' or 'threshold'")
        if self.top_pair_score not in ("max", "sum"):
            raise ConfigError("pipeline.top_pair_score", "must be 'max' or 'sum'")
        for name in ("min_support", "min_confidence"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigError(f"pipeline.{name}", "must lie in (0, 1]")
        if not 0 <= self.detect_threshold <= 1:
            raise ConfigError("pipeline.detect_threshold", "must lie in [0, 1]")
        if self.n_pred < 1 or self.n_perm < 1 or self.replications < 1:
            raise ConfigError("pipeline", "n_pred, n_perm and replications must be positive")
        object.__setattr__(self, "filter_cols", tuple(self.filter_cols or ()))

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "mcmc"}
        d["filter_cols"] = list(self.filter_cols)
        d["mcmc"] = self.mcmc.to_dict()
        return d

    @classmethod
    def from_dict(cls, d, path="pipeline"):
        d = dict(d or {})
        mcmc = McmcConfig.from_dict(d.pop("mcmc", None), f"{path}.mcmc")
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"{path}.{key}", "unknown field")
        try:
            return cls(mcmc=mcmc, **d)
        except ConfigError as e:
            raise e.rebase("pipeline", path) from None
        except (TypeError, ValueError) as e:
            raise ConfigError(path, str(e)) from None

    def with_seed(self, seed):
        return replace(self, mcmc=self.mcmc.with_seed(seed))


@dataclass
class DiscoveryResult:
    dataset: Dataset
    draws: PosteriorDraws
    summaries: list
    candidates: list
    top_pair_fraction: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    p_cut: float = 0.01

    @property
    def declared(self):
        """Candidate pairs whose test p-value fell below the cut-off."""
        return [pr for pr, rep in self.reports.items() if rep.p_value < self.p_cut]


def prepare(ds: Dataset, cfg: PipelineConfig):
    """Standardize continuous covariates (and optionally the response)."""
    if ds.standardized:
        return ds
    has_cont = bool(ds.continuous_idx)
    if has_cont or (cfg.standardize_response and ds.response_kind == "continuous"):
        return standardize(ds, response=cfg.standardize_response)
    return ds


def discover(fitted: Dataset, draws: PosteriorDraws, cfg: PipelineConfig):
    """Stage two: rules per retained partition, then candidate pairs."""
    view = discretize(fitted, cfg.bins)
    order = fitted.names
    iterates = mine_draws(draws.labels, view, cfg.min_cluster, cfg.min_support,
                          cfg.min_confidence, cfg.max_order)
    summaries = aggregate(iterates, order, detect_threshold=0.0)
    if cfg.filter_cols:
        summaries = filter_pairs(summaries, cfg.filter_cols)
    if cfg.candidate_mode == "top_pair":
        tops = [top_pair_per_iterate(r, order, score=cfg.top_pair_score) for r in iterates]
        if cfg.filter_cols:
            tops = [{pr for pr in s if set(cfg.filter_cols).intersection(pr)} for s in tops]
        candidates, frac = top_pair_candidates(tops, order, cfg.top_pair_min_fraction)
    else:
        candidates = [ps.pair for ps in summaries if ps.pr >= cfg.detect_threshold]
        frac = {}
    return view, summaries, candidates, frac


def run_pipeline(ds: Dataset, cfg: PipelineConfig, seed=None, test=True):
    """All three stages on ``ds``. ``seed`` overrides the MCMC seed; the
    testing stage draws from a generator derived from the same seed."""
    if seed is not None:
        cfg = cfg.with_seed(seed)
    fitted = prepare(ds, cfg)
    draws = run_mcmc(fitted, cfg.mcmc)
    view, summaries, candidates, frac = discover(fitted, draws, cfg)
    res = DiscoveryResult(fitted, draws, summaries, candidates, frac, p_cut=cfg.p_cut)
    if test and candidates:
        engine = PredictiveEngine(draws, fitted, cfg.mcmc.prior)
        rng = make_rng(cfg.mcmc.seed ^ 0x5DEECE66D)
        for pr in candidates:
            res.reports[pr] = test_interaction(pr, engine, view, cfg.n_pred, cfg.n_perm,
                                               cfg.replications, rng)
            log.debug("pair %s p=%.4f", pr, res.reports[pr].p_value)
    return res


def test_pairs(fitted, draws, pairs, cfg: PipelineConfig, seed):
    """Run the testing stage on explicitly chosen pairs."""
    view = discretize(fitted, cfg.bins)
    engine = PredictiveEngine(draws, fitted, cfg.mcmc.prior)
    rng = make_rng(seed)
    return {tuple(pr): test_interaction(tuple(pr), engine, view, cfg.n_pred, cfg.n_perm,
                                        cfg.replications, rng) for pr in pairs}


test_pairs.__test__ = False


def mean_clusters(draws: PosteriorDraws):
    return float(np.mean(draws.n_clusters()))
