import json

import pytest

from entangle_ot.cli import main
from entangle_ot.measures import DiscreteMeasure, save_measure


def write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def test_ot_line_example(tmp_path, capsys):
    save_measure(DiscreteMeasure([[0.0], [1.0]]), tmp_path / "a.json")
    save_measure(DiscreteMeasure([[1.0], [2.0]]), tmp_path / "b.json")
    plan = tmp_path / "plan.json"
    code = main(["ot", str(tmp_path / "a.json"), str(tmp_path / "b.json"), "--coupling-out", str(plan)])
    assert code == 0
    assert float(capsys.readouterr().out) == pytest.approx(1.0)
    assert json.loads(plan.read_text())["converged"]
    assert main(["ot", str(tmp_path / "a.json"), str(tmp_path / "b.json"), "--format", "json",
                 "--alpha", "2"]) == 0
    assert json.loads(capsys.readouterr().out)["wasserstein"] == pytest.approx(1.0)


def test_verify_scenario(tmp_path, capsys):
    cfg = write(tmp_path, "v.json", {
        "scenario": {"kind": "label_shift", "points_per_domain": 20, "target_weights": [0.3, 0.7]},
        "model": {"random": True, "scale": 2.0},
        "seeds": [0, 1],
    })
    assert main(["verify", "--config", cfg, "--jobs", "2"]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert lines[0] == "bound_id,lhs,rhs,slack,passed,context"
    assert not any(",false," in line for line in lines)


def test_verify_reports_violation_at_negative_tolerance(tmp_path, capsys):
    # a tolerance below zero demands strict slack, which the exact identities cannot give
    cfg = write(tmp_path, "v.json", {"scenario": {"points_per_domain": 10}, "bounds": ["corollary"]})
    assert main(["verify", "--config", cfg, "--tolerance", "-1.0"]) == 1


def test_entangle_and_gen(tmp_path, capsys):
    cfg = write(tmp_path, "e.json", {"scenario": {"kind": "covariate", "points_per_domain": 20}})
    assert main(["entangle", "--config", cfg, "--format", "json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["oub"] >= rep["target_risk"] - 1e-7
    gen = write(tmp_path, "g.json", {"kind": "gradual", "s": 2, "points_per_domain": 10})
    assert main(["gen", "--config", gen]) == 0
    assert len(json.loads(capsys.readouterr().out)["chain"]) == 3


def test_train_writes_outputs(tmp_path, capsys):
    cfg = write(tmp_path, "t.json", {"scenario": {"points_per_domain": 30},
                                     "train": {"objective": "wrr", "epochs": 2, "lr": 0.05}})
    out = tmp_path / "run"
    assert main(["train", "--config", cfg, "--out", str(out), "--seed", "1"]) == 0
    assert (out / "history.csv").read_text().startswith("epoch,")
    assert (out / "model.json").exists()
    assert capsys.readouterr().out.startswith("objective,")


def test_gaussian(capsys):
    assert main(["gaussian", "--seed", "3"]) == 0
    assert "gaussian_decomposition" in capsys.readouterr().out


def test_input_errors(tmp_path, capsys):
    assert main(["verify", "--config", str(tmp_path / "missing.json")]) == 2
    bad = write(tmp_path, "bad.json", {"scenario": {}, "colour": 1})
    assert main(["verify", "--config", bad]) == 2
    with pytest.raises(SystemExit) as info:
        main(["ot", "--no-such-flag"])
    assert info.value.code == 2
