"""Prior and MCMC configuration, config-file parsing and seed derivation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np
import yaml

from .ppmx import CohesionSpec, SimilarityHyper

DEFAULT_CUTPOINTS = (0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message

    def rebase(self, own, path):
        """Same error with the leading ``own`` component replaced by ``path``."""
        if self.path == own or self.path.startswith(own + "."):
            return ConfigError(path + self.path[len(own):], self.message)
        return self


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the Gaussian / latent-ordinal PPMx model.

    Cluster parameters are ``mu* ~ N(mu0, sig0^2)`` and ``sig* ~ Unif(0, A)``
    with ``mu0 ~ N(mu0_mean, mu0_sd^2)`` and ``sig0 ~ Unif(0, sig0_upper)``.
    Setting ``fixed_mu0``/``fixed_sig0`` freezes the hyperparameters.
    """

    A: float = 1.0
    cohesion: CohesionSpec = field(default_factory=CohesionSpec)
    similarity: SimilarityHyper = field(default_factory=SimilarityHyper)
    cutpoints: tuple = DEFAULT_CUTPOINTS
    mu0_mean: float = 0.0
    mu0_sd: float = 10.0
    sig0_upper: float = 10.0
    fixed_mu0: Optional[float] = None
    fixed_sig0: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "cutpoints", tuple(float(c) for c in self.cutpoints))
        if not self.A > 0:
            raise ConfigError("prior.A", "must be positive")
        if not self.mu0_sd > 0:
            raise ConfigError("prior.mu0_sd", "must be positive")
        if not self.sig0_upper > 0:
            raise ConfigError("prior.sig0_upper", "must be positive")
        if len(self.cutpoints) < 1 or np.any(np.diff(self.cutpoints) <= 0):
            raise ConfigError("prior.cutpoints", "must be strictly increasing")
        if self.fixed_sig0 is not None and not 0 < self.fixed_sig0:
            raise ConfigError("prior.fixed_sig0", "must be positive")

    @property
    def fixed_hyper(self):
        return self.fixed_mu0 is not None and self.fixed_sig0 is not None

    @property
    def n_grades(self):
        return len(self.cutpoints) + 1

    def to_dict(self):
        d = asdict(self)
        d["cutpoints"] = list(self.cutpoints)
        return d

    @classmethod
    def from_dict(cls, d, path="prior"):
        d = dict(d or {})
        kw = {}
        coh = d.pop("cohesion", None)
        if coh is not None:
            if isinstance(coh, str):
                coh = {"kind": coh}
            try:
                kw["cohesion"] = CohesionSpec(**coh)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"{path}.cohesion", str(e)) from None
        sim = d.pop("similarity", None)
        if sim is not None:
            try:
                kw["similarity"] = SimilarityHyper(**sim)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"{path}.similarity", str(e)) from None
        known = {f.name for f in fields(cls)}
        for key, val in d.items():
            if key not in known:
                raise ConfigError(f"{path}.{key}", "unknown field")
            kw[key] = val
        try:
            return cls(**kw)
        except ConfigError as e:
            raise e.rebase("prior", path) from None
        except (TypeError, ValueError) as e:
            raise ConfigError(path, str(e)) from None


@dataclass(frozen=True)
class McmcConfig:
    """Chain length and thinning; ``(n_iter - burn_in) // thin`` states are
    kept. ``likelihood=False`` drops the response from the label update,
    which samples the partition prior (used for diagnostics)."""

    n_iter: int = 2000
    burn_in: int = 1000
    thin: int = 2
    n_aux: int = 3
    seed: int = 0
    prior: PriorConfig = field(default_factory=PriorConfig)
    adapt: bool = True
    likelihood: bool = True

    def __post_init__(self):
        for name in ("n_iter", "thin", "n_aux"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"mcmc.{name}", "must be a positive integer")
        if not 0 <= self.burn_in < self.n_iter:
            raise ConfigError("mcmc.burn_in", "must satisfy 0 <= burn_in < n_iter")

    @property
    def n_keep(self):
        return (self.n_iter - self.burn_in) // self.thin

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "prior"}
        d["prior"] = self.prior.to_dict()
        return d

    @classmethod
    def from_dict(cls, d, path="mcmc"):
        d = dict(d or {})
        prior = PriorConfig.from_dict(d.pop("prior", None), f"{path}.prior")
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"{path}.{key}", "unknown field")
        try:
            return cls(prior=prior, **d)
        except ConfigError as e:
            raise e.rebase("mcmc", path) from None
        except (TypeError, ValueError) as e:
            raise ConfigError(path, str(e)) from None

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def config_hash(obj):
    """SHA-256 of the canonical JSON form; independent of key order."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def cell_seed(master_seed, *coords):
    """Per-cell 64-bit seed from the master seed and the cell's coordinates.

    seed = first 8 bytes (big endian) of SHA-256 over the canonical JSON of
    ``[master_seed, coords...]``. Independent of execution order.
    """
    digest = hashlib.sha256(canonical_json([int(master_seed), *coords]).encode()).digest()
    return int.from_bytes(digest[:8], "big")


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config file must hold a mapping")
    return data
