"""End-to-end tests for the command-line interface."""

import json

import pytest

from src import cli
from src.cli import main, parse_function, parse_levels
from src.core.config_loader import ENV_MODE, ENV_THREADS
from src.core.errors import ConfigError


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv(ENV_THREADS, raising=False)
    monkeypatch.delenv(ENV_MODE, raising=False)


def read_json(path):
    return json.loads(path.read_text())


def test_no_command():
    assert main([]) == 0


def test_zoo_list():
    assert main(["zoo", "list"]) == 0


def test_verify_gasket(tmp_path):
    assert main(["verify", "--zoo", "gasket:2,2", "--out", str(tmp_path)]) == 0
    report = read_json(tmp_path / "verify.json")
    assert report["r"] == ["3/5"] * 3
    assert report["residual"] == 0.0
    assert report["projection"] == "mean"
    assert [row["det"] for row in report["nondegeneracy"]] == ["3/25"] * 3


def test_verify_reports_boundary_form(tmp_path):
    assert main(["verify", "--zoo", "gasket:2,2", "--out", str(tmp_path)]) == 0
    form = read_json(tmp_path / "verify.json")["boundary_form"]
    assert form["ok"]
    assert form["kernel_dim"] == 1
    assert all(form["checks"].values())


def test_verify_rejects_non_laplacian_form(tmp_path):
    harmonic = tmp_path / "bad.json"
    harmonic.write_text(json.dumps({
        "D": [[-2, 1, 1], [1, -2, 1], [1, 1, -1]],
        "r": ["3/5", "3/5", "3/5"],
        "structure": {
            "n_symbols": 3,
            "boundary_size": 3,
            "gluing": [[1, 2, 2, 1], [1, 3, 3, 1], [2, 3, 3, 2]],
            "anchors": {"1": 1, "2": 2, "3": 3},
        },
    }))
    assert main(["verify", "--harmonic", str(harmonic), "--out", str(tmp_path)]) == 3
    form = read_json(tmp_path / "verify.json")["boundary_form"]
    assert not form["ok"]
    assert not form["checks"]["D2 kernel is constants"]
    assert form["checks"]["D3 off-diagonal nonnegative"]


def test_emit_then_verify(tmp_path):
    target = tmp_path / "g23.json"
    assert main(["zoo", "emit", "--family", "gasket", "--d", "2", "--l", "3", "--out", str(target)]) == 0
    assert read_json(target)["structure"]["n_symbols"] == 6
    assert main(["verify", "--harmonic", str(target), "--out", str(tmp_path)]) == 0
    assert read_json(tmp_path / "verify.json")["r"] == ["7/15"] * 6


def test_emit_into_directory(tmp_path):
    assert main(["zoo", "emit", "hata:1/3", "--out", str(tmp_path)]) == 0
    spec = read_json(tmp_path / "hata.json")
    assert spec["r"] == ["1/3", "8/9"]
    assert spec["Q"] == {"pin": 3}


def test_harmonic_file_without_weights_is_solved(tmp_path):
    harmonic = tmp_path / "sg.json"
    harmonic.write_text(json.dumps({"D": [[-2, 1, 1], [1, -2, 1], [1, 1, -2]], "r": "solve"}))
    structure = tmp_path / "structure.json"
    structure.write_text(json.dumps({
        "n_symbols": 3,
        "boundary_size": 3,
        "gluing": [[1, 2, 2, 1], [1, 3, 3, 1], [2, 3, 3, 2]],
        "anchors": {"1": 1, "2": 2, "3": 3},
    }))
    args = ["verify", "--structure", str(structure), "--harmonic", str(harmonic), "--out", str(tmp_path)]
    assert main(args) == 0
    assert read_json(tmp_path / "verify.json")["r"] == ["3/5"] * 3


def test_vertices(tmp_path):
    assert main(["vertices", "--zoo", "hata:1/2", "-m", "1", "--out", str(tmp_path)]) == 0
    data = read_json(tmp_path / "vertices.json")
    assert data["size"] == 5
    assert len(data["vertices"]) == 5


def test_energy_measure_table(tmp_path):
    assert main(["energy-measure", "--zoo", "gasket:2,2", "--f", "basis:q1", "-m", "1", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "energy_measure.csv").read_text() == "word,value\n1,12/5\n2,4/5\n3,4/5\n"
    data = read_json(tmp_path / "energy_measure.json")
    assert data["values"] == {"1": "12/5", "2": "4/5", "3": "4/5"}
    assert not (tmp_path / "audit.json").exists()


def test_mutual_measure_with_audit(tmp_path):
    args = ["energy-measure", "--zoo", "gasket:2,2", "--f", "basis:q1", "--g", "basis:q2", "-m", "2",
            "--out", str(tmp_path)]
    assert main(args) == 0
    assert (tmp_path / "audit.json").exists()


def test_dominant_default(tmp_path):
    assert main(["dominant", "--zoo", "gasket:2,2", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "dominant.csv").read_text() == "word,value\n1,4\n2,4\n3,4\n"


def test_dominant_coefficient_count(tmp_path):
    args = ["dominant", "--zoo", "gasket:2,2", "--f", "basis:q1", "--f", "basis:q2", "--coeff", "2",
            "--out", str(tmp_path)]
    assert main(args) == 2


def test_index_hata(tmp_path):
    assert main(["index", "--zoo", "hata:1/2", "-m", "3", "--out", str(tmp_path)]) == 0
    data = read_json(tmp_path / "index.json")
    assert data["esssup_proxy"] == 1
    assert data["psd_violations"] == []
    lines = (tmp_path / "index.csv").read_text().splitlines()
    assert lines[0] == "word,rank,sigma_ratio,mass"
    assert len(lines) == 9


def test_derivative_ladder(tmp_path):
    args = ["derivative", "--zoo", "gasket:2,2", "--f", "basis:q2", "--g", "basis:q1", "--levels", "1:3",
            "--out", str(tmp_path)]
    assert main(args) == 0
    data = read_json(tmp_path / "ladder.json")
    assert data["gap_nonincreasing"]
    assert data["bounded"]
    assert [row["level"] for row in data["levels"]] == ["1", "2", "3"]
    assert len((tmp_path / "slopes.csv").read_text().splitlines()) == 28


def test_derivative_levels_below_function(tmp_path):
    args = ["derivative", "--zoo", "gasket:2,2", "--f", "random:1:3", "--g", "basis:q1", "--levels", "1:2",
            "--out", str(tmp_path)]
    assert main(args) == 2


def test_oscillation(tmp_path):
    args = ["oscillation", "--zoo", "gasket:2,2", "--f", "basis:q1", "-m", "2", "--probe-depth", "1",
            "--out", str(tmp_path)]
    assert main(args) == 0
    assert read_json(tmp_path / "oscillation.json")["cells"] == 9


@pytest.mark.parametrize("args", [
    ["verify", "--zoo", "gasket:1,2"],
    ["verify"],
    ["verify", "--zoo", "hata", "--harmonic", "x.json"],
    ["energy-measure", "--zoo", "gasket:2,2", "--f", "wave:1"],
    ["zoo", "emit"],
])
def test_input_errors_exit_two(tmp_path, args):
    assert main(args + ["--out", str(tmp_path)]) == 2


def test_unexpected_error_exit_four(tmp_path, monkeypatch):
    def boom(args):
        raise RuntimeError("boom")

    monkeypatch.setitem(cli.COMMANDS, "verify", boom)
    assert main(["verify", "--zoo", "gasket:2,2", "--out", str(tmp_path)]) == 4


def test_parse_levels():
    assert parse_levels("2:8:2") == [2, 4, 6, 8]
    assert parse_levels("1:3") == [1, 2, 3]
    assert parse_levels("4") == [4]
    for bad in ("5:1", "a:b", "1:4:0"):
        with pytest.raises(ConfigError):
            parse_levels(bad)


def test_parse_function(sg, tmp_path):
    assert parse_function(sg, "basis:q2").label == "h_q2"
    assert parse_function(sg, "boundary:1,0,0").values.tolist() == [1, 0, 0]
    assert parse_function(sg, "random:3:2").level == 2
    path = tmp_path / "f.json"
    path.write_text(json.dumps({"level": 1, "values": [0, 1, 2, 3, 4, 5]}))
    f = parse_function(sg, f"file:{path}")
    assert f.level == 1
    assert f.values.tolist() == [0, 1, 2, 3, 4, 5]
    with pytest.raises(ConfigError):
        parse_function(sg, "basis:qx")
