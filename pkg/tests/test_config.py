import pytest

from microcal.config import ConfigError, PipelineConfig, config_from_dict, load_config
from microcal.grade import DESK_BUDGET


def test_defaults_mirror_reference_setup():
    cfg = PipelineConfig()
    assert (cfg.n_train, cfg.n_test, cfg.budget) == (60, 10, DESK_BUDGET)
    assert cfg.fixed == {"nu": 0.2}
    assert cfg.triaxial_levels == (34.5, 68.9, 103.4, 137.9, 172.4)
    plan = cfg.plan()
    assert [s.n_hidden for s in plan.stages] == [2, 3, 2, 2, 2, 2]


def test_load_yaml(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 4\nbounds:\n  k2: [200, 1500]\nprotocols:\n  uniaxial: {n_steps: 50}\n"
                 "sensitivity: {n: 30}\n")
    cfg = load_config(p)
    assert cfg.seed == 4 and cfg.bounds_obj()["k2"] == (200.0, 1500.0)
    assert cfg.sensitivity.n == 30
    assert cfg.plan().group("uniaxial").protocol_dict == {"n_steps": 50}


@pytest.mark.parametrize("raw", [
    {"seeds": 1},
    {"bounds": {"k5": [0, 1]}},
    {"bounds": {"E": [5, 1]}},
    {"protocols": {"biaxial": {}}},
    {"protocols": {"uniaxial": {"strain_max": 0.1}}},
    {"sensitivity": {"samples": 3}},
    {"k3_variant": "three"},
    {"hidden": {"k9": 2}},
    {"fixed": {"nu": 0.6}},
    {"n_train": 1},
])
def test_invalid_configs_rejected(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_malformed_yaml(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: [1\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_digest_tracks_settings():
    a, b = PipelineConfig(), PipelineConfig(seed=1)
    assert a.digest("n_train") == b.digest("n_train")
    assert a.digest("seed") != b.digest("seed")
    assert PipelineConfig(output="x").digest() == a.digest()
