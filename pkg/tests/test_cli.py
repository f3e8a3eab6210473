import csv
import json

import pytest

from mmspace import ExperimentConfig, InputError, Report, emit_report, run_experiment
from mmspace.cli import main
from mmspace.errors import ConfigurationError
from mmspace.reports import ANCHORS, CHECKS, SCHEMA, load_reports

GAUSS = {"family": "gaussian", "dimension": 1}


def write_config(tmp_path, **over):
    cfg = {"schema": SCHEMA, "weight": GAUSS, "h": 0.05, "geometry": {"b": 2.0, "beta": 0.75, "R0": 0.0}, "checks": [], "out": "run", "seed": 3}
    cfg.update(over)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_empty_check_list_writes_summary_only(tmp_path):
    cfg = ExperimentConfig.load(write_config(tmp_path))
    assert run_experiment(cfg) == []
    files = sorted(p.name for p in (tmp_path / "run").iterdir())
    assert files == ["summary.json", "timings.json"]
    assert json.loads((tmp_path / "run" / "summary.json").read_text())["passed"] is True


def test_gaussian_tame_admissible_doubling(tmp_path):
    path = write_config(tmp_path, checks=["tame", "admissible", "doubling"])
    assert main(["verify-all", "--config", str(path)]) == 0
    reports = load_reports(tmp_path / "run")
    assert [r.check for r in reports] == ["tame", "admissible", "doubling"]
    assert all(r.passed for r in reports)
    assert all(r.anchor == ANCHORS[r.check] for r in reports)


def test_inadmissible_geometry_rejected_before_computing(tmp_path):
    path = write_config(tmp_path, geometry={"b": 1.0, "beta": 0.75, "R0": 0.25}, checks=["tame"])
    assert main(["verify-all", "--config", str(path)]) == 2
    assert not (tmp_path / "run").exists()


@pytest.mark.parametrize(
    "over",
    [
        {"schema": "other/9"},
        {"weight": "missing.json"},
        {"checks": ["no-such-check"]},
        {"h": -1.0},
        {"sign": "?"},
        {"weight": {"family": "nonsense", "dimension": 1}},
    ],
)
def test_invalid_configs_exit_2(tmp_path, over):
    path = write_config(tmp_path, **over)
    assert main(["bmo", "--config", str(path)]) == 2


def test_missing_config_and_bad_usage(tmp_path):
    assert main(["bmo", "--config", str(tmp_path / "none.json")]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["bmo", "--config", str(write_config(tmp_path)), "--threads", "0"]) == 2


def test_weight_file_reference(tmp_path):
    (tmp_path / "w.json").write_text(json.dumps(GAUSS))
    path = write_config(tmp_path, weight="w.json", checks=["tame"])
    assert main(["verify-all", "--config", str(path)]) == 0


def test_failing_check_exits_1(tmp_path, capsys):
    path = write_config(tmp_path, checks=["metric_equivalence"], options={"metric_equivalence": {"C_max": 1.0}})
    assert main(["verify-all", "--config", str(path)]) == 1
    assert "metric_equivalence" in capsys.readouterr().err
    summary = json.loads((tmp_path / "run" / "summary.json").read_text())
    assert summary["failed"] == ["metric_equivalence"]


def test_reports_are_byte_identical(tmp_path):
    checks = ["cubes", "bmo", "sharp", "jn", "h1"]
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    pa = write_config(a, checks=checks)
    pb = write_config(b, checks=checks)
    assert main(["verify-all", "--config", str(pa)]) == 0
    assert main(["verify-all", "--config", str(pb), "--threads", "4"]) == 0
    for c in checks + ["summary"]:
        assert (a / "run" / f"{c}.json").read_bytes() == (b / "run" / f"{c}.json").read_bytes()


def test_seed_changes_the_hash_not_the_anchor(tmp_path):
    path = write_config(tmp_path, checks=["bmo"])
    r1 = run_experiment(ExperimentConfig.load(path), write=False)[0]
    cfg = ExperimentConfig.load(path)
    cfg.seed = 4
    r2 = run_experiment(cfg, write=False)[0]
    assert r1.inputs_hash != r2.inputs_hash
    assert r1.anchor == r2.anchor


def test_csv_one_row_per_constant(tmp_path):
    path = write_config(tmp_path, checks=["tame", "cubes", "bmo"])
    assert main(["verify-all", "--config", str(path)]) == 0
    assert main(["report", "--out", str(tmp_path / "run")]) == 0
    rows = list(csv.DictReader((tmp_path / "run" / "reports.csv").open()))
    reports = load_reports(tmp_path / "run")
    expected = 0
    for r in reports:
        stack = [r.constants]
        while stack:
            d = stack.pop()
            for v in d.values():
                if isinstance(v, dict):
                    stack.append(v)
                elif not isinstance(v, list):
                    expected += 1
    assert len(rows) == expected
    assert {row["check"] for row in rows} == {"tame", "cubes", "bmo"}


def test_emit_report_determinism_and_errors(tmp_path):
    rep = Report("tame", ANCHORS["tame"], "0" * 64, {"C": 1.5, "nested": {"x": float("inf")}}, True, {})
    p1 = emit_report([rep], tmp_path / "x")[0].read_bytes()
    p2 = emit_report([rep], tmp_path / "y")[0].read_bytes()
    assert p1 == p2
    assert json.loads(p1)["passed"] is True
    with pytest.raises(InputError):
        emit_report([], tmp_path / "z")
    with pytest.raises(InputError):
        emit_report([rep], tmp_path / "z", "xml")


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    rep = Report("tame", ANCHORS["tame"], "0", {}, True, {})
    with pytest.raises(OSError):
        emit_report([rep], blocker / "sub")


def test_discretize_verb(tmp_path):
    path = write_config(tmp_path)
    assert main(["discretize", "--config", str(path), "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "space.npz").is_file()


def test_every_check_has_an_anchor():
    assert set(CHECKS) == set(ANCHORS)
    assert len(set(ANCHORS.values())) == len(ANCHORS)


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig.load(write_config(tmp_path, checks=["bmo"]))
    again = ExperimentConfig.from_dict(cfg.to_dict(), tmp_path)
    assert again.canonical() == cfg.canonical()
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"schema": SCHEMA}, tmp_path)
