import hashlib

import numpy as np
import pytest

from raid.config import (ConfigError, McmcConfig, PriorConfig, canonical_json, cell_seed, load_config,
                         make_rng)
from raid.pipeline import PipelineConfig


def test_cell_seed_definition():
    digest = hashlib.sha256(b'[5,"sweep",{"A":0.1}]').digest()
    assert cell_seed(5, "sweep", {"A": 0.1}) == int.from_bytes(digest[:8], "big")
    assert cell_seed(5, {"b": 1, "a": 2}) == cell_seed(5, {"a": 2, "b": 1})
    assert cell_seed(5, "x") != cell_seed(6, "x")
    assert 0 <= cell_seed(0) < 2 ** 64


def test_make_rng_is_reproducible():
    np.testing.assert_array_equal(make_rng(3).random(5), make_rng(3).random(5))
    assert isinstance(make_rng(2 ** 64 - 1).bit_generator, np.random.PCG64)


def test_canonical_json_handles_numpy():
    assert canonical_json({"b": np.int64(2), "a": np.float64(0.5)}) == '{"a":0.5,"b":2}'


@pytest.mark.parametrize("raw, path", [
    ({"mcmc": {"prior": {"A": 0}}}, "pipeline.mcmc.prior.A"),
    ({"mcmc": {"prior": {"cohesion": {"kind": "dp", "M": -1}}}}, "pipeline.mcmc.prior.cohesion"),
    ({"mcmc": {"prior": {"similarity": {"k0": 0}}}}, "pipeline.mcmc.prior.similarity"),
    ({"mcmc": {"burn_in": 5000}}, "pipeline.mcmc.burn_in"),
    ({"mcmc": {"thinning": 2}}, "pipeline.mcmc.thinning"),
    ({"bins": 4}, "pipeline.bins"),
    ({"candidate_mode": "vote"}, "pipeline.candidate_mode"),
    ({"colour": 1}, "pipeline.colour"),
])
def test_config_errors_name_the_field(raw, path):
    with pytest.raises(ConfigError) as err:
        PipelineConfig.from_dict(raw)
    assert err.value.path == path


def test_config_roundtrip():
    cfg = PipelineConfig.from_dict({"bins": 3, "filter_cols": ["X1"],
                                    "mcmc": {"seed": 9, "prior": {"A": 0.1, "cohesion": "uniform"}}})
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.with_seed(4).mcmc.seed == 4
    assert McmcConfig(n_iter=100, burn_in=10, thin=3).n_keep == 30
    assert PriorConfig().n_grades == 5


def test_load_config(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("")
    assert load_config(p) == {}
