"""Tests for settings resolution, scalars, errors and writers."""

import json
from fractions import Fraction

import numpy as np
import pytest

from src.analysis.export import write_csv, write_json
from src.core.config_loader import ENV_MODE, ENV_THREADS, load_json, load_settings, load_yaml
from src.core.errors import (
    ConfigError,
    FractalError,
    HarmonicError,
    LevelOverflow,
    NotProportional,
    StructureError,
)
from src.core.parallel import parallel_map, split_blocks
from src.core.scalars import Mode, as_array, format_scalar, is_negligible, parse_scalar


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv(ENV_THREADS, raising=False)
    monkeypatch.delenv(ENV_MODE, raising=False)


def test_defaults():
    settings = load_settings()
    assert settings.mode is Mode.RATIONAL
    assert settings.threads == 1
    assert settings.limits.zoo_max_cells == 64
    assert settings.index.quantiles == [0.1, 0.5, 0.9]
    assert settings.derivative.probe_depth == 3


def test_overrides_ignore_none():
    settings = load_settings(overrides={"mode": "float", "threads": None, "output": {"dir": "out"}})
    assert settings.mode is Mode.FLOAT
    assert settings.threads == 1
    assert settings.output.dir == "out"


def test_environment(monkeypatch):
    monkeypatch.setenv(ENV_THREADS, "4")
    monkeypatch.setenv(ENV_MODE, "double")
    settings = load_settings()
    assert settings.threads == 4
    assert settings.mode is Mode.FLOAT


def test_environment_bad_threads(monkeypatch):
    monkeypatch.setenv(ENV_THREADS, "many")
    with pytest.raises(ConfigError):
        load_settings()


def test_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_THREADS, "4")
    config = tmp_path / "settings.yaml"
    config.write_text("threads: 2\ntolerances:\n  rank: 1.0e-6\n")
    settings = load_settings(config)
    assert settings.threads == 2
    assert settings.tolerances.rank == 1e-6
    # untouched siblings keep their defaults
    assert settings.tolerances.psd == 1e-10
    assert load_settings(config, {"threads": 5}).threads == 5


@pytest.mark.parametrize("text", [
    "threads: 0\n",
    "index:\n  quantiles: [0.5, 1.5]\n",
    "colour: red\n",
    "mode: quad\n",
    "- just\n- a list\n",
    "threads: [\n",
])
def test_invalid_settings(tmp_path, text):
    config = tmp_path / "bad.yaml"
    config.write_text(text)
    with pytest.raises(ConfigError):
        load_settings(config)


def test_missing_files(tmp_path):
    with pytest.raises(ConfigError):
        load_yaml(tmp_path / "absent.yaml")
    with pytest.raises(ConfigError):
        load_json(tmp_path / "absent.json")


def test_load_json_shapes(tmp_path):
    path = tmp_path / "doc.json"
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_json(path)
    path.write_text("{broken")
    with pytest.raises(ConfigError):
        load_json(path)
    path.write_text('{"n_symbols": 3}')
    assert load_json(path) == {"n_symbols": 3}


def test_mode_aliases():
    assert Mode.from_string(" Exact ") is Mode.RATIONAL
    assert Mode.from_string("f64") is Mode.FLOAT
    with pytest.raises(ConfigError):
        Mode.from_string("quad")


def test_parse_scalar():
    assert parse_scalar("3/5", Mode.RATIONAL) == Fraction(3, 5)
    assert parse_scalar("0.25", Mode.RATIONAL) == Fraction(1, 4)
    assert parse_scalar(2.0, Mode.RATIONAL) == 2
    assert parse_scalar("3/5", Mode.FLOAT) == 0.6
    with pytest.raises(ConfigError):
        parse_scalar(0.1, Mode.RATIONAL)
    with pytest.raises(ConfigError):
        parse_scalar(True, Mode.RATIONAL)
    with pytest.raises(ConfigError):
        parse_scalar("1/0", Mode.RATIONAL)


def test_as_array_modes():
    exact = as_array([[1, "1/2"]], Mode.RATIONAL)
    assert exact.dtype == object
    assert exact.tolist() == [[1, Fraction(1, 2)]]
    assert as_array([[1, "1/2"]], Mode.FLOAT).tolist() == [[1.0, 0.5]]


def test_format_scalar():
    assert format_scalar(Fraction(12, 5)) == "12/5"
    assert format_scalar(Fraction(4)) == "4"
    assert format_scalar(0.5) == "0.5"


def test_split_blocks():
    assert split_blocks(10, 3) == [(0, 4), (4, 7), (7, 10)]
    assert split_blocks(2, 5) == [(0, 1), (1, 2)]
    assert split_blocks(4, 1) == [(0, 4)]


def test_parallel_map_serial():
    assert parallel_map(abs, [-1, 2, -3], threads=1) == [1, 2, 3]


def test_error_codes():
    err = LevelOverflow("too deep")
    assert err.to_dict() == {"code": "level_overflow", "message": "too deep"}
    assert isinstance(err, StructureError)
    assert isinstance(NotProportional("x"), HarmonicError)
    assert all(cls.exit_code == 2 for cls in (FractalError, ConfigError, LevelOverflow, NotProportional))


def test_write_json(tmp_path):
    path = write_json(tmp_path / "nested" / "report.json", {
        "b": Fraction(3, 5),
        "a": np.array([Fraction(1), Fraction(1, 2)], dtype=object),
        "c": np.float64(0.25),
    })
    text = path.read_text()
    assert text.endswith("\n")
    assert json.loads(text) == {"a": ["1", "1/2"], "b": "3/5", "c": 0.25}
    assert text.index('"a"') < text.index('"b"')


def test_write_csv(tmp_path):
    path = write_csv(tmp_path / "t.csv", [{"word": "1", "value": Fraction(4, 5), "extra": 1}], ("word", "value"))
    assert path.read_text() == "word,value\n1,4/5\n"


def test_is_negligible():
    assert is_negligible(1e-20, 1.0, 1e-14)
    assert not is_negligible(1e-10, 1.0, 1e-14)
    assert is_negligible(1e-10, 1e5, 1e-14)
    assert not is_negligible(Fraction(1, 10 ** 30), 1.0, 1e-14)
    assert is_negligible(Fraction(0), 0.0, 0.0)
