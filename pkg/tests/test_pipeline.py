import numpy as np
import pytest
from sklearn.base import clone

from tsadw.ensemble import BlockSpec
from tsadw.nn.lstm import NetworkConfig
from tsadw.phasor import split_dataset
from tsadw.pipeline import (
    ConfigError, DelayAwareTSA, MissingArtifactError, PipelineConfig, load_suite, save_suite,
    train_suite,
)

from conftest import random_dataset


def test_seed_derivation_and_overrides():
    cfg = PipelineConfig.default().with_overrides(seed=10, phi=0.8, shift_ms=0.0, jobs=2)
    assert [cfg.seed(s) for s in ("split", "allocation", "training", "thresholds", "delay", "noise")] == \
        [10, 11, 12, 13, 14, 15]
    assert cfg.phi == 0.8 and cfg.jobs == 2
    assert cfg.delay_model().shift == 0.0 and cfg.delay_model().seed == 14
    assert cfg.train_config("main", 3).seed == 12 * 1000 + 3


def test_config_rejects_bad_values(tmp_path):
    for bad in ({"assessment": {"phi": 2}}, {"nope": {}}, {"data": {"nope": 1}},
                {"run": {"seed": -1}}, {"main": {"supervision": "some"}}, {"noise": {"tve_cap": 2}},
                {"assessment": 3}, {"data": {"split_ratio": 1.0}}):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(bad)
    with pytest.raises(MissingArtifactError):
        PipelineConfig.from_toml(tmp_path / "missing.toml")
    p = tmp_path / "c.toml"
    p.write_text('[delay]\nshift_ms = 3.5\n[run]\nseed = 7\n')
    cfg = PipelineConfig.from_toml(p)
    assert cfg.delay_model().shift == 3.5 and cfg.seed("split") == 7
    assert cfg.noise_model() is not None
    assert PipelineConfig.from_dict({"noise": {"enabled": False}}).noise_model() is None


def _tiny_specs(B):
    return [BlockSpec("main", tuple(range(B)), NetworkConfig(2 * B, (4,), (3,))),
            BlockSpec("ensemble", (0, 1), NetworkConfig(4, (3,), ()), "ens-a", 2),
            BlockSpec("ensemble", (2, 3), NetworkConfig(4, (3,), ()), "ens-b", 2)]


def test_suite_round_trip(tmp_path, rng):
    ds = random_dataset(rng, 16, B=4, T=5)
    train, _ = split_dataset(ds, 0.75, 0)
    cfg = PipelineConfig.from_dict({"main": {"epochs": 2}, "ensemble": {"epochs": 2},
                                    "thresholds": {"max_iter": 10}})
    suite, alloc, info = train_suite(train, cfg, specs=_tiny_specs(4))
    assert alloc == {} and set(info) == {"main", "ens-a", "ens-b"}
    save_suite(suite, tmp_path)
    back = load_suite(tmp_path, phi=0.9)
    assert back.phi == 0.9
    for a, b in zip(suite.blocks, back.blocks):
        assert a.schedule == b.schedule and a.spec == b.spec
        assert all(np.array_equal(p, q) for p, q in zip(a.network.parameters(), b.network.parameters()))
    assert np.array_equal(back.stats.mean, suite.stats.mean)
    (tmp_path / "checkpoints" / "ens-a.tsann").unlink()
    with pytest.raises(MissingArtifactError):
        load_suite(tmp_path)


def test_estimator_params():
    est = DelayAwareTSA(phi=0.6, main_epochs=5, random_state=3)
    p = est.get_params()
    assert p["phi"] == 0.6 and p["main_epochs"] == 5 and p["random_state"] == 3
    assert clone(est).get_params() == p
    est.set_params(phi=0.4)
    assert est._config().phi == 0.4 and est._config().seed("training") == 5
    with pytest.raises(TypeError):
        est.fit(np.zeros((3, 3)))
