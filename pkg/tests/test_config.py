import pytest

from qs4d.config import DEFAULTS, Config, ConfigError, parse_config, template


def test_template_round_trips_to_defaults():
    cfg = parse_config(template())
    assert cfg.to_dict() == Config().to_dict()


def test_template_lists_every_key():
    text = template()
    for key in DEFAULTS:
        assert f"{key} = " in text


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config("model.Q = 3\n")


def test_bad_value_reports_line():
    with pytest.raises(ConfigError, match=":2:"):
        parse_config("model.N = 4\nmodel.H = many\n")


def test_missing_equals_rejected():
    with pytest.raises(ConfigError):
        parse_config("model.N 4\n")


def test_comments_and_blank_lines_ignored():
    cfg = parse_config("# header\n\nmodel.N = 12  # trailing\n")
    assert cfg["model.N"] == 12


def test_quant_view():
    cfg = Config({"quant.A": "4", "quant.state": "8", "quant.kernel_domain": "discrete"})
    q = cfg.quant()
    assert q.A == 4 and q.state == 8 and q.B is None
    assert q.kernel_domain == "discrete"


def test_off_spellings():
    for word in ("off", "none", "float", "OFF"):
        assert Config({"quant.C": word})["quant.C"] == "off"


def test_zero_bits_rejected():
    with pytest.raises(ConfigError):
        Config({"quant.C": "0"})


def test_invalid_hyper_surfaces_as_config_error():
    with pytest.raises(ConfigError):
        Config({"model.dt_min": "0.5", "model.dt_max": "0.1"}).hyper()


def test_train_method_checked():
    with pytest.raises(ConfigError):
        Config({"train.method": "sgd"}).train_config()


def test_qat_method_picks_up_quant():
    tc = Config({"train.method": "qat", "quant.A": "4"}).train_config()
    assert tc.quant is not None and tc.quant.A == 4


def test_noise_training_only_when_requested():
    assert Config({"noise.sigma": "0.05"}).train_config().noise is None
    tc = Config({"noise.sigma": "0.05", "noise.when": "training-and-inference"}).train_config()
    assert tc.noise is not None and tc.noise.sigma == 0.05
