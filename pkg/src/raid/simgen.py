"""Synthetic data for the simulation studies, the linear-model baseline and
the replicate harness that turns both into detection-rate tables."""

from __future__ import annotations

import logging
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np
from scipy import linalg, stats

from .config import cell_seed, make_rng
from .core import ColumnSpec, Dataset

log = logging.getLogger(__name__)

SCENARIOS = ("f0", "f1", "f2", "f3")
MECHANISMS = ("mean", "spread", "shape")
SIGMAS = (1e-3, 1e-2, 1e-1, 1.0)
FRACTIONS = (1.0, 0.6, 0.25)

# location, scale and skewness of the SN branch in f3, as tabulated
SN_TABLE = (10.0, 1.0, 20.0)
MIX_MEAN = math.sqrt(15.0) / 4.0
MIX_SD = 0.25


def standardized_skew_normal(shape=20.0):
    """(location, scale) giving a skew-normal with mean 0 and variance 1."""
    delta = shape / math.sqrt(1.0 + shape * shape)
    mean_z = delta * math.sqrt(2.0 / math.pi)
    scale = 1.0 / math.sqrt(1.0 - mean_z * mean_z)
    return -scale * mean_z, scale


def skew_normal(loc, scale, shape, size, rng):
    """Draw SN(loc, scale, shape) via loc + scale(δ|U0| + sqrt(1-δ²) U1)."""
    delta = shape / math.sqrt(1.0 + shape * shape)
    u0 = np.abs(rng.standard_normal(size))
    u1 = rng.standard_normal(size)
    return loc + scale * (delta * u0 + math.sqrt(1.0 - delta * delta) * u1)


@dataclass(frozen=True)
class GeneratorSpec:
    """One cell of a simulation grid.

    ``family`` is ``"toy"`` (``scenario`` in f0..f3) or ``"osteo"``
    (``mechanism``, ``covariate_kind`` and ``sigma``). ``sn_location`` and
    ``sn_scale`` override the skew-normal branch of f3.
    """

    family: str = "toy"
    scenario: str = "f1"
    mechanism: str = "mean"
    covariate_kind: str = "categorical"
    sigma: float = 1.0
    n: int = 500
    interaction_fraction: float = 1.0
    sn_location: float = SN_TABLE[0]
    sn_scale: float = SN_TABLE[1]
    seed: int = 0

    def __post_init__(self):
        if self.family not in ("toy", "osteo"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "toy" and self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.family == "osteo":
            if self.mechanism not in MECHANISMS:
                raise ValueError(f"mechanism must be one of {MECHANISMS}")
            if self.covariate_kind not in ("categorical", "continuous"):
                raise ValueError("covariate_kind must be 'categorical' or 'continuous'")
            if not any(math.isclose(self.sigma, s) for s in SIGMAS):
                raise ValueError(f"sigma must be one of {SIGMAS}")
        if not any(math.isclose(self.interaction_fraction, f) for f in FRACTIONS):
            raise ValueError(f"interaction_fraction must be one of {FRACTIONS}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.sn_scale <= 0:
            raise ValueError("sn_scale must be positive")

    def coords(self):
        """Cell coordinates (everything but the seed) used for seed derivation."""
        d = asdict(self)
        d.pop("seed")
        if self.family == "toy":
            for k in ("mechanism", "covariate_kind", "sigma"):
                d.pop(k)
        else:
            d.pop("scenario")
        return d

    def label(self):
        if self.family == "toy":
            return self.scenario
        return f"{self.covariate_kind}:{self.mechanism}:sigma={self.sigma:g}"


def _binary_table_response(scenario, x1, x2, rng, sd_mult=1.0, sn=SN_TABLE[:2]):
    """Response from the toy table for binary ``x1``, ``x2``."""
    n = x1.size
    y = np.empty(n)
    both0 = (x1 == 0) & (x2 == 0)
    x1only = (x1 == 1) & (x2 == 0)
    rest = ~(both0 | x1only)
    if scenario == "f0":
        return sd_mult * rng.standard_normal(n)
    if scenario == "f1":
        means = np.where(both0, 4.0, np.where(x1only, 2.0, 0.0))
        return means + sd_mult * rng.standard_normal(n)
    if scenario == "f2":
        sds = np.where(both0, 6.0, np.where(x1only, 3.0, 1.0))
        return sd_mult * sds * rng.standard_normal(n)
    if scenario == "f3":
        y[rest] = sd_mult * rng.standard_normal(rest.sum())
        y[x1only] = skew_normal(sn[0], sn[1] * sd_mult, SN_TABLE[2], x1only.sum(), rng)
        k = both0.sum()
        sign = np.where(rng.random(k) < 0.5, -1.0, 1.0)
        y[both0] = sign * MIX_MEAN + sd_mult * MIX_SD * rng.standard_normal(k)
        return y
    raise ValueError(f"unknown scenario {scenario!r}")


def _binary_col(name):
    return ColumnSpec.categorical(name, ("0", "1"))


def _dilute(y, fraction, rng):
    """Replace round((1 - fraction) n) responses, chosen at random, by N(0,1)."""
    n = y.size
    k = int(math.floor((1.0 - fraction) * n + 0.5))
    if k == 0:
        return y
    idx = rng.choice(n, size=k, replace=False)
    y = y.copy()
    y[idx] = rng.standard_normal(k)
    return y


def gen_toy(scenario, n=500, seed=0, sn_location=SN_TABLE[0], sn_scale=SN_TABLE[1],
            interaction_fraction=1.0):
    """Three iid Bernoulli(0.5) covariates X1..X3 and a response drawn from
    the scenario's table entry for (X1, X2)."""
    if scenario not in SCENARIOS:
        raise ValueError(f"scenario must be one of {SCENARIOS}")
    rng = make_rng(seed)
    X = rng.integers(0, 2, size=(n, 3)).astype(float)
    y = _binary_table_response(scenario, X[:, 0], X[:, 1], rng, sn=(sn_location, sn_scale))
    y = _dilute(y, interaction_fraction, rng)
    cols = tuple(_binary_col(f"X{j + 1}") for j in range(3))
    return Dataset(cols, X, y)


def gen_osteo_like(spec: GeneratorSpec):
    """21 covariates with the planted pair (X1, X2).

    Categorical kind: X1, X2 Bernoulli(0.5), response from the toy table
    (mean -> f1, spread -> f2, shape -> f3) with standard deviations scaled
    by ``sigma``, X3..X21 Uniform(-1, 1). Continuous kind: X1..X19
    Uniform(-1, 1), X20, X21 Bernoulli(0.5).
    """
    if spec.family != "osteo":
        raise ValueError("gen_osteo_like needs an osteo-family spec")
    rng = make_rng(spec.seed)
    n, s = spec.n, spec.sigma
    if spec.covariate_kind == "categorical":
        xb = rng.integers(0, 2, size=(n, 2)).astype(float)
        xc = rng.uniform(-1.0, 1.0, size=(n, 19))
        X = np.column_stack([xb, xc])
        scen = {"mean": "f1", "spread": "f2", "shape": "f3"}[spec.mechanism]
        y = _binary_table_response(scen, xb[:, 0], xb[:, 1], rng, sd_mult=s,
                                   sn=(spec.sn_location, spec.sn_scale))
        cols = (_binary_col("X1"), _binary_col("X2")) + tuple(
            ColumnSpec.continuous(f"X{j}") for j in range(3, 22))
    else:
        xc = rng.uniform(-1.0, 1.0, size=(n, 19))
        xb = rng.integers(0, 2, size=(n, 2)).astype(float)
        X = np.column_stack([xc, xb])
        prod = xc[:, 0] * xc[:, 1]
        e = rng.standard_normal(n)
        if spec.mechanism == "mean":
            y = 5.0 * prod + s * e
        elif spec.mechanism == "spread":
            y = np.exp(5.0 * prod) * s * e
        else:
            pi = 0.5 * (1.0 - np.tanh(100.0 * prod))  # 1/(1+exp(200 x1 x2)) without overflow
            unimodal = rng.random(n) < pi
            centre = np.where(rng.random(n) < 0.5, -0.5, 0.5)
            y = np.where(unimodal, 0.0, centre) + s * e
        cols = tuple(ColumnSpec.continuous(f"X{j}") for j in range(1, 20)) + (
            _binary_col("X20"), _binary_col("X21"))
    y = _dilute(y, spec.interaction_fraction, rng)
    return Dataset(cols, X, y)


def generate(spec: GeneratorSpec):
    if spec.family == "toy":
        return gen_toy(spec.scenario, spec.n, spec.seed, spec.sn_location, spec.sn_scale,
                       spec.interaction_fraction)
    return gen_osteo_like(spec)


def gen_ordinal_latent(n=300, seed=0, cutpoints=(0.0, 1 / 3, 2 / 3, 1.0), latent_sd=0.06):
    """Ordinal grades from a latent normal mixture with a planted (X1, X2)
    interaction.

    X1, X2, X3 are binary, X4 has three levels and X5, X6 are continuous.
    Units with X1 = X2 = 1 draw their latent score around 1.15 (top grade);
    everyone else draws from a two-component mixture at 0.15 and 0.5, so no
    single covariate explains the grade on its own.
    """
    rng = make_rng(seed)
    xb = rng.integers(0, 2, size=(n, 3))
    x4 = rng.integers(0, 3, size=n)
    xc = rng.normal(size=(n, 2))
    planted = (xb[:, 0] == 1) & (xb[:, 1] == 1)
    centre = np.where(rng.random(n) < 0.5, 0.15, 0.5)
    centre = np.where(planted, 1.15, centre)
    z = centre + latent_sd * rng.standard_normal(n)
    grades = np.searchsorted(np.asarray(cutpoints), z, side="left")
    X = np.column_stack([xb, x4, xc]).astype(float)
    cols = (_binary_col("X1"), _binary_col("X2"), _binary_col("X3"),
            ColumnSpec.categorical("X4", ("a", "b", "c")),
            ColumnSpec.continuous("X5"), ColumnSpec.continuous("X6"))
    return Dataset(cols, X, grades.astype(float), "ordinal", len(cutpoints) + 1)


class SingularDesignError(ValueError):
    def __init__(self, aliased):
        self.aliased = list(aliased)
        super().__init__(f"design matrix is singular; aliased columns: {self.aliased}")


def _main_effects(ds: Dataset):
    """Main-effect design columns per covariate (dummies for categoricals)."""
    blocks = []
    for j, col in enumerate(ds.columns):
        x = ds.X[:, j]
        if col.is_categorical:
            codes = x.astype(int)
            blocks.append([(f"{col.name}={col.levels[v]}", (codes == v).astype(float))
                           for v in range(1, len(col.levels))])
        else:
            blocks.append([(col.name, x.astype(float))])
    return blocks


def lm_detect(ds: Dataset, alpha=0.01):
    """Pairs whose interaction terms are significant in the saturated
    two-way OLS model.

    Each pair's interaction columns are tested jointly with an F statistic,
    which is the squared t statistic when the pair has a single interaction
    column (binary or continuous covariates).

    Returns
    -------
    detected : set of tuple
    pvalues : dict mapping pair to p-value
    """
    if ds.response_kind != "continuous":
        raise ValueError("lm_detect needs a continuous response")
    blocks = _main_effects(ds)
    names = ["(Intercept)"]
    cols = [np.ones(ds.m)]
    for b in blocks:
        for nm, v in b:
            names.append(nm)
            cols.append(v)
    owner = {}
    for a, b in combinations(range(ds.p), 2):
        pair = (ds.columns[a].name, ds.columns[b].name)
        for na, va in blocks[a]:
            for nb, vb in blocks[b]:
                owner[len(cols)] = pair
                names.append(f"{na}:{nb}")
                cols.append(va * vb)
    D = np.column_stack(cols)
    n, q = D.shape
    if n <= q:
        raise ValueError(f"need more rows than coefficients ({n} <= {q})")
    _, R, piv = linalg.qr(D, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > diag[0] * max(n, q) * np.finfo(float).eps * 10))
    if rank < q:
        raise SingularDesignError(sorted(names[i] for i in piv[rank:]))
    beta, _, _, _ = linalg.lstsq(D, ds.y)
    resid = ds.y - D @ beta
    df = n - q
    s2 = float(resid @ resid) / df
    cov = s2 * linalg.inv(D.T @ D)
    pvalues = {}
    by_pair = {}
    for i, pr in owner.items():
        by_pair.setdefault(pr, []).append(i)
    for pr, idx in by_pair.items():
        b = beta[idx]
        V = cov[np.ix_(idx, idx)]
        F = float(b @ linalg.solve(V, b)) / len(idx)
        pvalues[pr] = float(stats.f.sf(F, len(idx), df))
    detected = {pr for pr, p in pvalues.items() if p < alpha}
    return detected, pvalues


# ---------------------------------------------------------------- study harness

PLANTED = ("X1", "X2")


def score(declared, planted=PLANTED):
    """(tp, fp, relaxed_fp) for a collection of declared pairs."""
    declared = {tuple(sorted(p)) for p in declared}
    target = tuple(sorted(planted))
    tp = int(target in declared)
    others = declared - {target}
    relaxed = sum(1 for p in others if not set(planted).intersection(p))
    return tp, len(others), relaxed


@dataclass
class CellOutcome:
    cell: str
    method: str
    replicate: int
    seed: int
    tp: int = 0
    fp: int = 0
    relaxed_fp: int = 0
    declared: list = field(default_factory=list)
    error: str = ""

    @property
    def ok(self):
        return not self.error


@dataclass
class StudyResult:
    outcomes: list

    def summary(self):
        """Rows of (cell, method, n_ok, n_failed, rate, mean_fp, mean_relaxed_fp)."""
        groups = {}
        for o in self.outcomes:
            groups.setdefault((o.cell, o.method), []).append(o)
        rows = []
        for (cell, method), outs in groups.items():
            good = [o for o in outs if o.ok]
            k = len(good)
            rows.append({
                "cell": cell, "method": method, "n_ok": k, "n_failed": len(outs) - k,
                "rate": float(np.mean([o.tp for o in good])) if k else float("nan"),
                "mean_fp": float(np.mean([o.fp for o in good])) if k else float("nan"),
                "mean_relaxed_fp": float(np.mean([o.relaxed_fp for o in good])) if k else float("nan"),
            })
        rows.sort(key=lambda r: (r["method"], r["cell"]))
        return rows

    def rate(self, cell, method):
        for r in self.summary():
            if r["cell"] == cell and r["method"] == method:
                return r["rate"]
        raise KeyError((cell, method))

    @property
    def n_failed(self):
        return sum(1 for o in self.outcomes if not o.ok)

    def pivot(self, value="rate"):
        """Methods as rows and cells as columns."""
        summ = self.summary()
        cells = list(dict.fromkeys(r["cell"] for r in summ))
        methods = list(dict.fromkeys(r["method"] for r in summ))
        look = {(r["method"], r["cell"]): r[value] for r in summ}
        return cells, [(m, [look.get((m, c), float("nan")) for c in cells]) for m in methods]


def _run_cell(task):
    spec, method, rep, data_seed, run_seed, pipe_cfg, alpha = task
    gspec = GeneratorSpec(**{**asdict(spec), "seed": data_seed})
    out = CellOutcome(gspec.label(), method, rep, run_seed)
    try:
        ds = generate(gspec)
        if method == "lm":
            declared, _ = lm_detect(ds, alpha)
        elif method == "raid":
            from .pipeline import run_pipeline
            res = run_pipeline(ds, pipe_cfg, seed=run_seed)
            declared = res.declared
        else:
            raise ValueError(f"unknown method {method!r}")
        out.declared = sorted(tuple(p) for p in declared)
        out.tp, out.fp, out.relaxed_fp = score(declared)
    except Exception as e:  # recorded, never fatal for the study
        out.error = f"{type(e).__name__}: {e}"
        log.warning("cell %s/%s/%d failed: %s", out.cell, method, rep, out.error)
        log.debug("%s", traceback.format_exc())
    return out


def study_tasks(specs, methods, replicates, master_seed, pipe_cfg=None, alpha=0.01):
    tasks = []
    for spec in specs:
        coords = spec.coords()
        for rep in range(replicates):
            data_seed = cell_seed(master_seed, "data", coords, rep)
            for method in methods:
                run_seed = cell_seed(master_seed, method, coords, rep)
                tasks.append((spec, method, rep, data_seed, run_seed, pipe_cfg, alpha))
    return tasks


def run_study(specs, methods=("raid", "lm"), replicates=50, pipe_cfg=None, master_seed=0,
              workers=1, alpha=0.01, progress=None):
    """Run every (cell, method, replicate) and collect the outcomes.

    Data seeds depend on the cell coordinates and replicate only, so every
    method sees the same data set and results do not depend on execution
    order. ``progress`` is called with each finished outcome.
    """
    if "raid" in methods and pipe_cfg is None:
        from .pipeline import PipelineConfig
        pipe_cfg = PipelineConfig()
    tasks = study_tasks(specs, methods, replicates, master_seed, pipe_cfg, alpha)
    outcomes = []
    workers = max(1, int(workers or 1))
    if workers == 1:
        for t in tasks:
            o = _run_cell(t)
            outcomes.append(o)
            if progress:
                progress(o)
    else:
        with ProcessPoolExecutor(max_workers=min(workers, os.cpu_count() or workers)) as pool:
            for o in pool.map(_run_cell, tasks, chunksize=1):
                outcomes.append(o)
                if progress:
                    progress(o)
    outcomes.sort(key=lambda o: (o.cell, o.method, o.replicate))
    return StudyResult(outcomes)
