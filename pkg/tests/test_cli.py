import csv
import json

import pytest

from fermichain import acceptance
from fermichain.cli import main
from fermichain.config import ConfigError, load_config


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_free_defaults(tmp_path):
    assert main(["free", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "free.json").read_text())
    assert summary["max_abs_diff"] < 1e-8 and summary["schema_version"] == 1
    assert max(float(r["abs_diff"]) for r in _rows(tmp_path / "free.csv")) < 1e-8


def test_trees_identity_table(tmp_path):
    assert main(["trees", "--n", "3", "--h-root", "-1", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "trees.csv")
    assert rows and all(r["identities"] == "1" and r["vf_telescoping_r2"] == "1" for r in rows)


def test_flow_zero_coupling(tmp_path):
    assert main(["flow", "--lambda", "0", "--r", "0.125", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "flow.json").read_text())["eta"] == 0.0
    for r in _rows(tmp_path / "flow.csv"):
        for key in ("z", "alpha", "mu", "lambda", "delta", "nu"):
            assert r[key] in ("", "0.0")
        assert r["Z"] in ("", "1.0")


def test_flow_regime1_only_for_negative_r(tmp_path):
    assert main(["flow", "--r", "-0.1", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "flow.csv")
    assert rows and all(r["lambda"] == "" for r in rows)


def test_other_subcommands(tmp_path):
    for cmd in (["ed", "--L", "6"], ["crossover"], ["propagator", "--npts", "5"]):
        assert main(cmd + ["--out", str(tmp_path)]) == 0
    assert {p.name for p in tmp_path.glob("*.csv")} == {"ed.csv", "crossover.csv",
                                                         "propagator.csv"}


def test_seeded_runs_are_byte_identical(tmp_path):
    args = ["trees", "--n", "5", "--h-root", "-1", "--exhaustive-max", "2"]
    for sub, seed in (("a", "3"), ("b", "3"), ("c", "4")):
        assert main(args + ["--seed", seed, "--out", str(tmp_path / sub)]) == 0
    a, b = ((tmp_path / s / "trees.csv").read_bytes() for s in ("a", "b"))
    assert a == b


@pytest.mark.parametrize("text, line", [
    ("[model]\nlambda = 0.05\nr = abc\n", 3),
    ("[model]\n\n# note\ngamma = 0.5\n", 4),
    ("[flow]\nfoo = 1\n", 2),
    ("[model]\nlambda 0.05\n", 2),
])
def test_config_errors_name_the_line(tmp_path, capsys, text, line):
    cfg = tmp_path / "run.ini"
    cfg.write_text(text)
    assert main(["flow", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert f"run.ini:{line}:" in capsys.readouterr().err
    with pytest.raises(ConfigError):
        load_config(cfg)


def test_config_file_and_overrides(tmp_path, monkeypatch):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[model]\nlambda = 0.02\nv = 0.0, 0.5\n[run]\nseed = 9\n")
    c = load_config(cfg)
    assert c["model"]["lambda"] == 0.02 and c.seed == 9 and c["model"]["v"] == (0.0, 0.5)
    monkeypatch.setenv("FERMICHAIN_OUT", str(tmp_path / "env"))
    assert load_config(cfg).out == str(tmp_path / "env")
    assert main(["flow", "--lambda", "0.5"]) == 2


def test_module_refusal_exit_status(tmp_path):
    assert main(["flow", "--r", "0.7", "--out", str(tmp_path)]) == 3


def test_report_status_follows_criteria(tmp_path, monkeypatch):
    assert main(["report", "--only", "5", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "report.csv")
    assert [r["criterion"] for r in rows] == ["5"] and rows[0]["pass"] == "1"

    def broken():
        return acceptance.Criterion(5, "forced failure", False, "x", "y")
    broken.number = 5
    monkeypatch.setattr(acceptance, "ALL", (broken,))
    assert main(["report", "--only", "5", "--out", str(tmp_path)]) == 1


def test_readme_config_sample_loads(tmp_path):
    import re
    from pathlib import Path
    readme = Path(__file__).resolve().parents[1] / "README.md"
    block = re.search(r"### Configuration file.*?```\n(.*?)```", readme.read_text(), re.S)
    cfg = tmp_path / "sample.ini"
    cfg.write_text(block.group(1))
    c = load_config(cfg)
    assert c["model"]["v"] == (0.0, 0.5) and c["flow"]["size"] == 24.0
