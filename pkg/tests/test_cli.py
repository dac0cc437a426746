import json
import os

import pytest

import cli
from commands.sweep import sweep_tasks
from commands.threshold import find_threshold
from commands.validate import check_rows, validate_results
from utils.helpers import closest_key, deep_merge, expand_range, parse_bool
from utils.results_store import read_curve_csv
from utils.sdpa import read_sdpa
from utils.sweep_config import ComputeError, ConfigError, SweepConfig, read_config_file


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


# --- Helpers ---

def test_expand_range():
    assert expand_range("0:2:0.5") == [0.0, 0.5, 1.0, 1.5, 2.0]
    assert expand_range("0.6, 0.8") == [0.6, 0.8]
    assert expand_range(3) == [3.0]
    assert expand_range([1, 2]) == [1.0, 2.0]
    with pytest.raises(ValueError):
        expand_range("5:1:1")
    with pytest.raises(ValueError):
        expand_range("0:1:0")


def test_parse_bool_and_closest_key():
    assert parse_bool("Yes") is True
    assert parse_bool("off") is False
    with pytest.raises(ValueError):
        parse_bool("maybe")
    assert closest_key("distnce", ["distance", "q", "eta_e"]) == "distance"
    assert closest_key("zzzz", ["distance", "q"]) is None


def test_deep_merge_skips_unset_values():
    merged = deep_merge({"q": None, "pdc": 1e-3, "nested": {"a": 1}}, {"q": "0.9", "nested": {"b": 2}})
    assert merged == {"q": "0.9", "pdc": 1e-3, "nested": {"a": 1, "b": 2}}


# --- Configuration ---

def test_config_defaults_per_scenario():
    one = SweepConfig()
    assert one.m is None and one.npa_level is None
    two = SweepConfig(scenario="2")
    assert two.m == 4 and two.npa_level == "1+AB+AZ" and two.alpha_max == 2.0


def test_config_rejects_inconsistent_values():
    with pytest.raises(ValueError):
        SweepConfig(scenario="1", m=4)
    with pytest.raises(ValueError):
        SweepConfig(scenario="direct", optimize_q=True)
    with pytest.raises(ValueError):
        SweepConfig(parties=5)
    with pytest.raises(ValueError):
        SweepConfig(scenario="2", displacements="0.1,0.2")
    with pytest.raises(ValueError):
        SweepConfig(distance="-1")


def test_config_file_suggests_misspelled_keys(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("scenario = 1\n# comment\ndistnce = 0:10:5\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="Did you mean 'distance'"):
        read_config_file(str(path))


def test_sweep_order_is_eta_then_q_then_distance():
    config = SweepConfig(q="0.9,0.95", eta_e="0.96,0.98", distance="0:1:1")
    tasks = sweep_tasks(config)
    assert tasks[:3] == [(0.9, 0.96, 0.0), (0.9, 0.96, 1.0), (0.95, 0.96, 0.0)]
    assert len(tasks) == 8
    assert sweep_tasks(SweepConfig(scenario="direct", distance="0,1"))[0] == (None, 0.97, 0.0)


# --- Commands ---

def test_commands_are_registered():
    parser = cli.build_parser()
    choices = parser._subparsers._group_actions[0].choices
    assert {"sweep", "threshold", "export-sdp", "validate"} <= set(choices)


def test_bad_arguments_exit_with_config_code(tmp_path):
    assert run("sweep", "--no-such-flag") == cli.EXIT_CONFIG
    assert run("sweep", "--distance", "5:1:1", "--out", tmp_path) == cli.EXIT_CONFIG
    assert run("sweep", "--scenario", "1", "--m", "4", "--out", tmp_path) == cli.EXIT_CONFIG


def test_direct_sweep_writes_curve_and_summary(tmp_path):
    assert run("sweep", "--scenario", "direct", "--distance", "0:0.2:0.1", "--out", tmp_path) == cli.EXIT_OK
    rows = read_curve_csv(os.path.join(tmp_path, "curve.csv"))
    assert [row["distance_km"] for row in rows] == [0.0, 0.1, 0.2]
    assert rows[0]["key_rate"] > 0
    assert all(row["provenance"] == "parity-CHSH" for row in rows)
    with open(os.path.join(tmp_path, "summary.json"), encoding="utf-8") as handle:
        summary = json.load(handle)
    assert summary["curves"][0]["max_secure_distance_km"] < 1.0


def test_sweep_output_is_reproducible(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        assert run("sweep", "--distance", "0,2", "--q", "0.95", "--out", out) == cli.EXIT_OK
    assert (first / "curve.csv").read_bytes() == (second / "curve.csv").read_bytes()


def test_config_file_and_flags_are_merged(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("scenario = direct\ndistance = 0,1\n", encoding="utf-8")
    assert run("sweep", "--config", path, "--distance", "0", "--out", tmp_path) == cli.EXIT_OK
    rows = read_curve_csv(os.path.join(tmp_path, "curve.csv"))
    assert len(rows) == 1 and rows[0]["scenario"] == "direct"


def test_validate_accepts_sweep_output_and_rejects_tampering(tmp_path):
    assert run("sweep", "--distance", "0,1", "--out", tmp_path) == cli.EXIT_OK
    csv_path = os.path.join(tmp_path, "curve.csv")
    assert validate_results(csv_path) == 2
    assert run("validate", "--out", tmp_path) == cli.EXIT_OK

    rows = read_curve_csv(csv_path)
    rows[0]["key_rate"] = rows[0]["key_rate"] + 1e-6
    assert check_rows(rows)
    assert run("validate", "--csv", os.path.join(tmp_path, "missing.csv")) == cli.EXIT_COMPUTE


def test_direct_threshold(tmp_path):
    config = SweepConfig(scenario="direct", out=str(tmp_path))
    threshold = find_threshold(config, "eta_e", lo=0.5, hi=1.0, tol=1e-3)
    assert 0.5 < threshold < 0.97
    with pytest.raises(ConfigError):
        find_threshold(config, "q", lo=0.5, hi=1.0)
    with pytest.raises(ComputeError):
        find_threshold(config, "eta_e", lo=0.5, hi=0.6)


def test_threshold_command_writes_result(tmp_path):
    assert run("threshold", "--scenario", "direct", "--lo", "0.5", "--out", tmp_path) == cli.EXIT_OK
    with open(os.path.join(tmp_path, "threshold.json"), encoding="utf-8") as handle:
        result = json.load(handle)
    assert result["parameter"] == "eta_e"
    assert 0.5 < result["threshold"] < 0.97


def test_export_sdp_writes_one_file_per_node(tmp_path):
    assert run("export-sdp", "--m", "3", "--out", tmp_path) == cli.EXIT_OK
    directory = os.path.join(tmp_path, "sdp")
    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as handle:
        manifest = json.load(handle)
    assert manifest["files"] == ["node_0.dat-s", "node_1.dat-s"]
    assert manifest["m"] == 3
    problem = read_sdpa(os.path.join(directory, "node_0.dat-s"))
    assert problem.m > 0


@pytest.mark.slow
def test_scenario1_threshold_with_optimized_q():
    config = SweepConfig(scenario="1", optimize_q=True)
    assert 0.92 <= find_threshold(config, "eta_e", lo=0.85, hi=1.0) <= 0.94


@pytest.mark.slow
def test_scenario2_threshold():
    config = SweepConfig(scenario="2", m=4)
    assert 0.95 <= find_threshold(config, "eta_e", lo=0.9, hi=1.0) <= 0.97
