import json

import pytest

from main import main
from src.conf.config import settings

EXPECTED_FILES = ["convergence.csv", "counts.csv", "points.csv", "histogram.csv", "kde.csv", "surface.csv"]


@pytest.fixture(autouse=True)
def no_shared_cache(monkeypatch):
    monkeypatch.setattr(settings, "cache", None)


def read_summary(out):
    return json.loads((out / "summary.json").read_text(encoding="utf-8"))


def test_run_both_methods(run_config, tmp_path):
    assert main(["run", "--config", str(run_config)]) == 0
    out = tmp_path / "results"
    for method in ("misc", "srbf"):
        for name in EXPECTED_FILES:
            assert (out / f"{method}_{name}").exists(), name
        assert (out / f"{method}_log.jsonl").exists()
    assert (out / "misc_profits.csv").exists()
    assert (out / "srbf_uncertainty.csv").exists()
    assert (out / "evaluations.jsonl").exists()
    summary = read_summary(out)
    assert summary["schema_version"] == 1
    assert set(summary["methods"]) == {"misc", "srbf"}
    assert summary["methods"]["misc"]["final"]["cost"] >= 150
    assert summary["methods"]["srbf"]["final"]["iteration"] <= 3


def test_reruns_are_byte_identical(run_config, tmp_path):
    outputs = [tmp_path / "first", tmp_path / "second"]
    for out in outputs:
        assert main(["run", "--config", str(run_config), "--out", str(out)]) == 0
    names = sorted(p.name for p in outputs[0].iterdir())
    assert names == sorted(p.name for p in outputs[1].iterdir())
    for name in names:
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes(), name


def test_budget_of_one_evaluates_the_root(run_config, tmp_path):
    out = tmp_path / "tiny"
    assert main(["run", "--config", str(run_config), "--method", "misc", "--budget", "1", "--out", str(out)]) == 0
    misc = read_summary(out)["methods"]["misc"]
    assert misc["final"]["cost"] == 1.0
    assert misc["counts"] == {"1": 1}
    assert misc["evaluations"] == 1
    assert (out / "misc_counts.csv").read_text(encoding="utf-8") == "iteration,cost,n[1]\n0,1.0,1\n"


def test_svg_charts(run_config, tmp_path):
    out = tmp_path / "charts"
    assert main(["run", "--config", str(run_config), "--method", "misc", "--budget", "20",
                 "--out", str(out), "--svg"]) == 0
    assert "<svg" in (out / "misc_convergence.svg").read_text(encoding="utf-8")
    assert not (out / "srbf_convergence.svg").exists()


def test_invalid_fidelity_count(run_config):
    config = json.loads(run_config.read_text(encoding="utf-8"))
    config["model"]["n_fidelities"] = 0
    run_config.write_text(json.dumps(config), encoding="utf-8")
    assert main(["run", "--config", str(run_config)]) == 2


def test_syntax_error_in_config(tmp_path, caplog):
    path = tmp_path / "broken.json"
    path.write_text('{"method": "misc",\n  "budget": }', encoding="utf-8")
    assert main(["run", "--config", str(path)]) == 2
    assert f"{path}:2:" in caplog.text


def test_missing_config(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nothing.json")]) == 2


def test_non_positive_budget_flag(run_config):
    assert main(["run", "--config", str(run_config), "--budget", "0"]) == 2


def test_unknown_builtin(run_config):
    config = json.loads(run_config.read_text(encoding="utf-8"))
    config["model"]["builtin"] = "nope"
    run_config.write_text(json.dumps(config), encoding="utf-8")
    assert main(["run", "--config", str(run_config)]) == 2


@pytest.fixture
def single_method_summaries(run_config, tmp_path):
    paths = []
    for method, budget in (("misc", "60"), ("srbf", "100")):
        out = tmp_path / method
        assert main(["run", "--config", str(run_config), "--method", method, "--budget", budget,
                     "--out", str(out)]) == 0
        paths.append(out / "summary.json")
    return paths


def test_compare_two_summaries(single_method_summaries, tmp_path, capsys):
    table = tmp_path / "table.csv"
    capsys.readouterr()
    assert main(["compare", *map(str, single_method_summaries), "--csv", str(table)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split() == ["source", "method", "snapshot", "iteration", "cost", "mean", "std"]
    assert len(lines) == 5
    rows = table.read_text(encoding="utf-8").strip().splitlines()
    assert len(rows) == 5
    assert [row.split(",")[2] for row in rows[1:]] == ["intermediate", "final"] * 2


def test_compare_one_summary(single_method_summaries, capsys):
    capsys.readouterr()
    assert main(["compare", str(single_method_summaries[0]), "--iteration", "1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3
    assert lines[1].split()[3] == "1"


def test_compare_rejects_other_schema(single_method_summaries, tmp_path, caplog):
    other = tmp_path / "other.json"
    data = json.loads(single_method_summaries[0].read_text(encoding="utf-8"))
    data["schema_version"] = 2
    other.write_text(json.dumps(data), encoding="utf-8")
    assert main(["compare", str(single_method_summaries[0]), str(other)]) == 1
    assert str(other) in caplog.text
