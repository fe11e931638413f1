import json

import pytest

from ddpc.config import ConfigError, RunConfig, config_from_dict, load_config


def test_empty_config_is_default():
    cfg = config_from_dict({})
    assert cfg == RunConfig()
    assert cfg.planner.n_scen == 300 and cfg.controller.N == 12 and cfg.ddp.eta == 0.8
    assert load_config(None) == cfg


def test_nested_values_and_int_to_float():
    cfg = config_from_dict({"seed": 4, "controller": {"W_SoC": 3, "w_radius": [0.1, 0.02]},
                            "planner": {"W_energy": None, "gamma_max": 2}})
    assert cfg.seed == 4 and cfg.controller.W_SoC == 3.0
    assert isinstance(cfg.controller.W_SoC, float) and cfg.planner.gamma_max == 2.0


@pytest.mark.parametrize("data, msg", [
    ({"planner": {"n_scenarios": 3}}, "planner.n_scenarios"),
    ({"bogus": 1}, "bogus"),
    ({"seed": "zero"}, "seed: expected an integer"),
    ({"seed": True}, "seed: expected an integer"),
    ({"controller": {"W_u": "x"}}, "controller.W_u: expected a number"),
    ({"fine_log": 1}, "fine_log: expected true or false"),
    ({"planner": 3}, "planner: expected an object"),
    ({"scenarios": ["A", "D"]}, "unknown scenario"),
    ({"bounds": {"y": [26, 22]}}, "bounds.y"),
    ({"days": 0}, "positive"),
])
def test_invalid_configs(data, msg):
    with pytest.raises(ConfigError, match=msg):
        config_from_dict(data)


def test_load_config_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[]")
    with pytest.raises(ConfigError, match="JSON object"):
        load_config(arr)


def test_fingerprint_tracks_content(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 1}))
    a, b = load_config(p), config_from_dict({"seed": 1})
    assert a.fingerprint() == b.fingerprint() != RunConfig().fingerprint()
    assert len(a.fingerprint()) == 12
    assert config_from_dict(a.to_dict()) == a
