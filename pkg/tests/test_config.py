"""
Run configuration: RunConfig validation, APP_* environment overrides and
the values the Flask app picks up from them.

`create_app` is imported inside the tests so each one builds a fresh app
with the environment it set.
"""
import os

import pytest

from app.config import DEFAULT_SYSTEMS_DIR, RunConfig, config_from_env
from app.errors import ValidationError

ENV_KEYS = ["APP_SEED", "APP_POINTS", "APP_T_MAX", "APP_EPS", "APP_SYSTEMS_DIR"]


@pytest.fixture(autouse=True)
def clean_env():
    saved = {key: os.environ.pop(key) for key in ENV_KEYS if key in os.environ}
    yield
    for key in ENV_KEYS:
        os.environ.pop(key, None)
    os.environ.update(saved)


def test_defaults_validate():
    config = RunConfig().validate()
    assert config.seed == 0
    assert config.points == 50
    assert config.tol_closure == 1e-6
    assert config.tol_isotropy == 1e-8
    assert config.tol_flow == 1e-10
    assert config.systems_dir == str(DEFAULT_SYSTEMS_DIR)


@pytest.mark.parametrize(
    "overrides, fragment",
    [
        ({"points": 0}, "points"),
        ({"seed": -1}, "seed"),
        ({"tol_flow": 0.0}, "tol_flow"),
        ({"eps": -1e-4}, "eps"),
        ({"fiber_times": ()}, "fiber_times"),
        ({"combination_bound": 0}, "combination_bound"),
        ({"format": "xml"}, "format"),
    ],
)
def test_invalid_values(overrides, fragment):
    with pytest.raises(ValidationError, match=fragment):
        RunConfig().with_overrides(**overrides).validate()


def test_with_overrides_skips_none_and_unknown_keys():
    config = RunConfig().with_overrides(seed=None, points=7, colour="blue")
    assert config.seed == 0
    assert config.points == 7


def test_env_overrides():
    config = config_from_env({"APP_SEED": "9", "APP_POINTS": "12", "APP_T_MAX": "40", "APP_EPS": ""})
    assert (config.seed, config.points, config.t_max) == (9, 12, 40.0)
    assert config.eps == 1e-4


def test_env_override_must_parse():
    with pytest.raises(ValidationError, match="APP_POINTS"):
        config_from_env({"APP_POINTS": "lots"})


def test_default_app_configuration():
    from app import create_app
    app = create_app()
    assert app.config["SEED"] == 0
    assert app.config["POINTS"] == 50
    assert app.config["SYSTEMS_DIR"] == str(DEFAULT_SYSTEMS_DIR)
    assert os.path.isdir(app.config["SYSTEMS_DIR"])


def test_app_reads_environment(tmp_path):
    os.environ["APP_SEED"] = "4"
    os.environ["APP_SYSTEMS_DIR"] = str(tmp_path)
    from app import create_app
    app = create_app()
    assert app.config["SEED"] == 4
    assert app.config["SYSTEMS_DIR"] == str(tmp_path)


def test_test_config_wins_over_environment():
    os.environ["APP_POINTS"] = "30"
    from app import create_app
    app = create_app({"POINTS": 5, "TESTING": True})
    assert app.config["POINTS"] == 5
    assert app.testing
