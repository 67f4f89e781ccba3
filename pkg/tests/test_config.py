import pytest

from bitgear.config import ConfigError, TrainingConfig, load_config, parse_config_text


def test_defaults_follow_published_settings():
    c = TrainingConfig()
    assert (c.B, c.d, c.eta, c.lambda_, c.lambda1, c.lambda2, c.gamma, c.L) == (2048, 256, 1e-3, 1e-4, 1, 0.1, 1, 2)
    assert c.estimator == "dirac_gauss" and c.wl_scheme == "linear_shifted" and c.R == 100


def test_text_round_trip(tmp_path):
    c = TrainingConfig(d=64, lambda_=0.5, estimator="ste")
    path = tmp_path / "c.cfg"
    path.write_text(c.to_text(), encoding="utf-8")
    assert load_config(path) == c


def test_file_then_overrides(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# comment\nd = 32\nlambda = 0.01  # trailing\n\nestimator = tanh\n", encoding="utf-8")
    c = load_config(path, {"d": "16", "seed": 3})
    assert (c.d, c.lambda_, c.estimator, c.seed) == (16, 0.01, "tanh", 3)


@pytest.mark.parametrize("text,match", [
    ("bogus = 1", "unknown config key"),
    ("d = 1.5", "bad value"),
    ("d", "expected"),
    ("estimator = sign", "estimator"),
    ("L = -1", "L must"),
    ("eta = 0", "eta must"),
])
def test_errors(tmp_path, text, match):
    path = tmp_path / "c.cfg"
    path.write_text(text + "\n", encoding="utf-8")
    with pytest.raises(ConfigError, match=match):
        load_config(path)


def test_parse_reports_line_numbers():
    with pytest.raises(ConfigError, match=":2:"):
        parse_config_text("d = 4\nnope = 1\n", "x.cfg")
