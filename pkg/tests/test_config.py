import pytest

from trafficast.config import (ConfigError, cluster_settings, default_config, env_overrides,
                               load_config, predict_settings, write_config)


def ini(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text, encoding="utf-8")
    return p


def test_defaults():
    cfg = default_config()
    assert cfg["run"]["seed"] == 0 and cfg["run"]["threads"] == 1
    assert cfg["interval"]["threshold"] == 0.8
    assert cfg["cluster"]["resolution"] == 64 and cfg["cluster"]["k"] is None
    assert cfg["predict"]["horizons"] == [1, 2, 3]
    assert cfg.get("data.period") == 288


def test_file_values_parsed(tmp_path):
    cfg = load_config(ini(tmp_path, "[cluster]\nk = 3\nepochs = 2\n[predict]\nhorizons = 1, 3\n"
                                    "patience = none\n[data]\nexclude_dates = 2017-10-02 2017-10-03\n"),
                      environ={})
    assert cfg["cluster"]["k"] == 3 and cfg["cluster"]["epochs"] == 2
    assert cfg["predict"]["horizons"] == [1, 3] and cfg["predict"]["patience"] is None
    assert cfg["data"]["exclude_dates"] == ["2017-10-02", "2017-10-03"]


def test_negative_learning_rate_names_field(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_config(ini(tmp_path, "[predict]\nlearning_rate = -0.1\n"), environ={})
    assert "predict.learning_rate" in str(err.value)


def test_every_problem_listed(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_config(ini(tmp_path, "[predict]\nepochs = x\nlstm1 = 0\ntypo = 1\n[nope]\na = 1\n"),
                    environ={})
    text = str(err.value)
    for needle in ("predict.epochs", "predict.lstm1", "predict.typo", "[nope]"):
        assert needle in text
    assert len(err.value.problems) == 4


def test_cross_field_check(tmp_path):
    with pytest.raises(ConfigError, match="k_min"):
        load_config(ini(tmp_path, "[cluster]\nk_min = 5\nk_max = 3\n"), environ={})


def test_environment_overrides_file(tmp_path):
    path = ini(tmp_path, "[predict]\nepochs = 7\n")
    cfg = load_config(path, environ={"TRAFFICAST_PREDICT_EPOCHS": "9", "OTHER": "x",
                                     "TRAFFICAST_RUN_SEED": "4"})
    assert cfg["predict"]["epochs"] == 9 and cfg["run"]["seed"] == 4
    with pytest.raises(ConfigError):
        env_overrides({"TRAFFICAST_BOGUS_KEY": "1"})
    with pytest.raises(ConfigError):
        load_config(None, environ={"TRAFFICAST_PREDICT_NOSUCH": "1"})


def test_roundtrip_and_digest(tmp_path):
    cfg = default_config().with_overrides(**{"cluster.k": 3, "predict.horizons": [2]})
    back = load_config(write_config(cfg, tmp_path / "out.ini"), environ={})
    assert back.to_dict() == cfg.to_dict()
    assert back.digest() == cfg.digest() != default_config().digest()


def test_settings_objects():
    cfg = default_config().with_overrides(**{"run.seed": 5, "predict.epochs": 2})
    dc = cluster_settings(cfg)
    pc = predict_settings(cfg)
    assert dc.seed == 5 and dc.resolution == 64
    assert pc.seed == 5 and pc.epochs == 2 and pc.batch_size == 64


def test_bad_ini_syntax(tmp_path):
    with pytest.raises(ConfigError):
        load_config(ini(tmp_path, "no section header\n"), environ={})
