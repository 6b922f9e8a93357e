import json

import pytest

from harmstrat import cli


def test_config_round_trip():
    cfg = cli.ExperimentConfig.defaults("product")
    cfg.covering.sigmas = [0.1, 1 / 3]
    again = cli.ExperimentConfig.from_json(cfg.to_json())
    assert again == cfg and again.to_json() == cfg.to_json() and again.hash() == cfg.hash()


def test_invalid_configs_exit_2_without_artifacts(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["order", "--spacing", "0.5", "--out", str(out)]) == 2
    assert not out.exists()
    assert cli.main(["order", "--set", "bogus=1", "--out", str(out)]) == 2
    assert cli.main(["order", "--set", "covering.rho=0.1", "--out", str(out)]) == 2
    assert not out.exists()


def test_missing_config_file_exits_4(tmp_path):
    assert cli.main(["order", "--config", str(tmp_path / "none.json"),
                     "--out", str(tmp_path / "o")]) == 4


def test_order_stage(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"example": "tripod", "grid": {"spacing": 1 / 64}}))
    out = tmp_path / "o"
    assert cli.main(["order", "--config", str(cfg_path), "--out", str(out)]) == 0
    lines = (out / "order.csv").read_text().splitlines()
    tag = json.loads((out / "manifest.json").read_text())["config_hash"]
    assert lines[0] == f"# config_hash={tag}"
    ord_phi = [float(row.split(",")[-1]) for row in lines[2:]]
    assert len(ord_phi) == 3 and all(abs(v - 1.5) <= 0.02 for v in ord_phi)
    assert json.loads((out / "order.json").read_text())["config_hash"] == tag
    assert json.loads((out / "field.jsonl").read_text().splitlines()[0])["header"]["config_hash"] == tag


def test_every_artifact_carries_the_hash(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["report", "--example", "tripod", "--spacing", "0.03125", "--out", str(out)]) == 0
    tag = json.loads((out / "manifest.json").read_text())["config_hash"]
    for path in out.iterdir():
        if path.suffix == ".json" and path.name != "config.json":
            assert json.loads(path.read_text())["config_hash"] == tag, path.name
        elif path.suffix == ".csv":
            assert path.read_text().splitlines()[0] == f"# config_hash={tag}", path.name
        elif path.suffix == ".jsonl":
            assert json.loads(path.read_text().splitlines()[0])["header"]["config_hash"] == tag


def test_stage_failure_exits_3_with_diagnostic(tmp_path):
    out = tmp_path / "o"
    code = cli.main(["order", "--mode", "solved", "--spacing", "0.03125",
                     "--set", "analysis.order_radii=[0.99]", "--out", str(out)])
    assert code == 3
    diag = json.loads((out / "diagnostic.json").read_text())
    assert diag["stage"] == "order"


def test_trace_file_input(tmp_path):
    first = tmp_path / "a"
    assert cli.main(["solve", "--example", "tripod", "--spacing", "0.03125", "--out", str(first)]) == 0
    out = tmp_path / "b"
    assert cli.main(["order", "--set", f"trace_file=\"{first / 'field.jsonl'}\"",
                     "--set", "grid.spacing=0.03125", "--out", str(out)]) == 0
    assert (out / "order.csv").exists()
