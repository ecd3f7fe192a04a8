import math

import numpy as np
import pytest
from scipy import stats

from raid.config import McmcConfig
from raid.core import ColumnSpec, Dataset
from raid.pipeline import PipelineConfig
from raid.simgen import (MIX_MEAN, MIX_SD, GeneratorSpec, SingularDesignError, gen_ordinal_latent,
                         gen_osteo_like, gen_toy, generate, lm_detect, run_study, score,
                         skew_normal, standardized_skew_normal)


def cells(ds):
    x1, x2 = ds.X[:, 0], ds.X[:, 1]
    return {"00": (x1 == 0) & (x2 == 0), "10": (x1 == 1) & (x2 == 0),
            "01": (x1 == 0) & (x2 == 1), "11": (x1 == 1) & (x2 == 1)}


def within(est, target, se, k=4):
    return abs(est - target) <= k * se


def test_toy_f1_cell_moments():
    ds = gen_toy("f1", 10000, seed=0)
    for key, mean in {"00": 4.0, "10": 2.0, "01": 0.0, "11": 0.0}.items():
        y = ds.y[cells(ds)[key]]
        assert within(y.mean(), mean, 1 / math.sqrt(y.size))
        assert within(y.std(ddof=1), 1.0, 1 / math.sqrt(2 * y.size))


def test_toy_f2_cell_spreads():
    ds = gen_toy("f2", 10000, seed=1)
    for key, sd in {"00": 6.0, "10": 3.0, "01": 1.0, "11": 1.0}.items():
        y = ds.y[cells(ds)[key]]
        assert within(y.mean(), 0.0, sd / math.sqrt(y.size))
        assert within(y.std(ddof=1), sd, sd / math.sqrt(2 * y.size))


def test_toy_f3_cells():
    ds = gen_toy("f3", 10000, seed=2)
    c = cells(ds)
    mix = ds.y[c["00"]]
    assert MIX_MEAN ** 2 + MIX_SD ** 2 == pytest.approx(1.0)
    assert within(mix.mean(), 0.0, 1 / math.sqrt(mix.size))
    assert within(mix.var(ddof=1), 1.0, 0.05)
    sn = ds.y[c["10"]]
    ref = stats.skewnorm(20, loc=10, scale=1)
    assert within(sn.mean(), ref.mean(), ref.std() / math.sqrt(sn.size))
    assert stats.kstest(sn, ref.cdf).pvalue > 1e-3


def test_standardized_skew_normal():
    loc, scale = standardized_skew_normal(20)
    ref = stats.skewnorm(20, loc=loc, scale=scale)
    assert ref.mean() == pytest.approx(0.0, abs=1e-12)
    assert ref.var() == pytest.approx(1.0, abs=1e-12)
    x = skew_normal(loc, scale, 20, 20000, np.random.default_rng(0))
    assert stats.kstest(x, ref.cdf).pvalue > 1e-3
    ds = gen_toy("f3", 8000, seed=3, sn_location=loc, sn_scale=scale)
    y = ds.y[cells(ds)["10"]]
    assert within(y.mean(), 0.0, 1 / math.sqrt(y.size))


def test_toy_layout_and_determinism():
    ds = gen_toy("f0", 50, seed=4)
    assert [c.name for c in ds.columns] == ["X1", "X2", "X3"]
    assert all(c.levels == ("0", "1") for c in ds.columns)
    np.testing.assert_array_equal(ds.y, gen_toy("f0", 50, seed=4).y)
    with pytest.raises(ValueError):
        gen_toy("f9", 10)


def test_dilution_count():
    full = gen_toy("f1", 1000, seed=5)
    part = gen_toy("f1", 1000, seed=5, interaction_fraction=0.25)
    # same covariates; 750 responses replaced
    np.testing.assert_array_equal(full.X, part.X)
    assert np.sum(full.y != part.y) == 750
    assert GeneratorSpec(interaction_fraction=0.6).interaction_fraction == 0.6
    with pytest.raises(ValueError):
        GeneratorSpec(interaction_fraction=0.5)


def test_osteo_mean_mechanism_tiny_noise():
    spec = GeneratorSpec("osteo", mechanism="mean", covariate_kind="continuous", sigma=1e-3,
                         n=400, seed=0)
    ds = gen_osteo_like(spec)
    assert ds.p == 21 and ds.columns[19].levels == ("0", "1")
    np.testing.assert_allclose(ds.y, 5 * ds.X[:, 0] * ds.X[:, 1], atol=6e-3)
    # a unit at x1 = x2 = 0.5 sits at 1.25
    assert 5 * 0.5 * 0.5 == 1.25


def test_osteo_shape_mechanism_is_bimodal_where_product_positive():
    spec = GeneratorSpec("osteo", mechanism="shape", covariate_kind="continuous", sigma=1e-2,
                         n=4000, seed=1)
    ds = gen_osteo_like(spec)
    prod = ds.X[:, 0] * ds.X[:, 1]
    pos, neg = ds.y[prod > 0.05], ds.y[prod < -0.05]
    assert np.mean(np.abs(np.abs(pos) - 0.5) < 0.05) > 0.95
    assert np.mean(np.abs(neg) < 0.05) > 0.95


def test_osteo_categorical_kind_scales_table():
    spec = GeneratorSpec("osteo", mechanism="mean", covariate_kind="categorical", sigma=0.1,
                         n=4000, seed=2)
    ds = generate(spec)
    assert ds.columns[0].is_categorical and not ds.columns[2].is_categorical
    y = ds.y[cells(ds)["00"]]
    assert within(y.mean(), 4.0, 0.1 / math.sqrt(y.size))
    assert within(y.std(ddof=1), 0.1, 0.1 / math.sqrt(2 * y.size))
    with pytest.raises(ValueError):
        GeneratorSpec("osteo", sigma=0.5)


def test_ordinal_generator():
    ds = gen_ordinal_latent(300, seed=0)
    assert ds.response_kind == "ordinal" and ds.n_grades == 5
    planted = (ds.X[:, 0] == 1) & (ds.X[:, 1] == 1)
    assert np.mean(ds.y[planted] == 4) > 0.95
    assert np.mean(np.isin(ds.y[~planted], [1, 2])) > 0.95


def nested_f_pvalue(D_full, D_red, y):
    rss = lambda D: np.sum((y - D @ np.linalg.lstsq(D, y, rcond=None)[0]) ** 2)
    q = D_full.shape[1] - D_red.shape[1]
    df = y.size - D_full.shape[1]
    F = (rss(D_red) - rss(D_full)) / q / (rss(D_full) / df)
    return stats.f.sf(F, q, df)


def test_lm_matches_nested_model_f_test():
    rng = np.random.default_rng(0)
    n = 120
    g = rng.integers(0, 3, n)
    x = rng.normal(size=n)
    b = rng.integers(0, 2, n)
    y = 1.5 * x * (g == 2) + rng.normal(size=n)
    cols = (ColumnSpec.categorical("g", ["a", "b", "c"]), ColumnSpec.continuous("x"),
            ColumnSpec.categorical("b", ["0", "1"]))
    ds = Dataset(cols, np.column_stack([g, x, b]).astype(float), y)
    detected, pv = lm_detect(ds)
    main = [np.ones(n), g == 1, g == 2, x, b]
    inter = {("g", "x"): [(g == 1) * x, (g == 2) * x], ("g", "b"): [(g == 1) * b, (g == 2) * b],
             ("x", "b"): [x * b]}
    full = np.column_stack(main + sum(inter.values(), [])).astype(float)
    for pair, cols_ in inter.items():
        red = np.column_stack(main + sum((v for k, v in inter.items() if k != pair), [])).astype(float)
        assert pv[pair] == pytest.approx(nested_f_pvalue(full, red, y), rel=1e-8)
    assert ("g", "x") in detected


def test_lm_detects_toy_f1():
    detected, pv = lm_detect(gen_toy("f1", 500, seed=0))
    assert ("X1", "X2") in detected and pv[("X1", "X2")] < 1e-10


def test_lm_singular_design():
    rng = np.random.default_rng(1)
    a = rng.integers(0, 2, 50).astype(float)
    cols = (ColumnSpec.categorical("a", ["0", "1"]), ColumnSpec.categorical("b", ["0", "1"]),
            ColumnSpec.continuous("c"))
    ds = Dataset(cols, np.column_stack([a, a, rng.normal(size=50)]), rng.normal(size=50))
    with pytest.raises(SingularDesignError) as err:
        lm_detect(ds)
    assert err.value.aliased


def test_lm_size_under_permuted_response():
    rng = np.random.default_rng(2)
    ds = gen_toy("f1", 200, seed=1)
    alpha = 0.05
    hits = 0
    reps = 400
    for _ in range(reps):
        perm = Dataset(ds.columns, ds.X, rng.permutation(ds.y))
        hits += ("X1", "X2") in lm_detect(perm, alpha)[0]
    assert alpha / 2 <= hits / reps <= 2 * alpha


def test_score():
    assert score([("X2", "X1")]) == (1, 0, 0)
    assert score([("X1", "X3"), ("X3", "X4")]) == (0, 2, 1)
    assert score([]) == (0, 0, 0)


def test_run_study_is_order_invariant_and_records_failures():
    specs = [GeneratorSpec(scenario="f1", n=120), GeneratorSpec(scenario="f0", n=120)]
    a = run_study(specs, methods=("lm",), replicates=3, master_seed=7)
    b = run_study(specs[::-1], methods=("lm",), replicates=3, master_seed=7)
    assert [(o.cell, o.replicate, o.seed, o.declared) for o in a.outcomes] == \
        [(o.cell, o.replicate, o.seed, o.declared) for o in b.outcomes]
    assert a.rate("f1", "lm") == 1.0
    bad = run_study(specs[:1], methods=("nope",), replicates=2)
    assert bad.n_failed == 2 and "unknown method" in bad.outcomes[0].error
    assert np.isnan(bad.summary()[0]["rate"])
    cells_, rows = a.pivot()
    assert cells_ == ["f0", "f1"] and rows[0][0] == "lm"


def test_run_study_with_raid_in_workers():
    cfg = PipelineConfig(mcmc=McmcConfig(n_iter=200, burn_in=100, thin=2), n_perm=99)
    spec = [GeneratorSpec(scenario="f1", n=150)]
    one = run_study(spec, ("raid",), 2, cfg, master_seed=3, workers=1)
    two = run_study(spec, ("raid",), 2, cfg, master_seed=3, workers=2)
    assert one.n_failed == 0
    assert [o.declared for o in one.outcomes] == [o.declared for o in two.outcomes]
