"""End-to-end command tests on a small generated survey: exit codes,
file outputs, idempotence, and config validation."""

import json
import os

import numpy as np
import pytest

from choicekit import cli
from choicekit import data as dataio


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    survey = root / "survey.dat"
    dataio.generate_survey_file(str(survey), n_respondents=220, menus_per_respondent=9, seed=17)
    return root


def _config(workdir, **sections):
    cfg = {
        "data": {"input": str(workdir / "survey.dat"), "seed": 1},
        "output": {"dir": str(workdir / "out")},
        "training": {"max_epochs": 15, "patience": 5, "seed": 1},
        "evaluation": {"audit_pairs": 64},
    }
    for key, value in sections.items():
        cfg.setdefault(key, {}).update(value)
    path = workdir / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_prepare_writes_dataset_and_log(workdir, capsys):
    cfg = _config(workdir)
    assert cli.main(["prepare", "--config", cfg]) == 0
    out = workdir / "out"
    assert (out / "dataset.json").exists()
    log = (out / "filter_log.tsv").read_text()
    assert log.startswith("rule\tdescription\tdropped")
    assert "known-choice" in log and "outliers" in log
    ds = dataio.Dataset.load(str(out / "dataset.json"))
    assert ds.n > 1000


def test_prepare_is_idempotent(workdir):
    cfg = _config(workdir)
    assert cli.main(["prepare", "--config", cfg]) == 0
    first = (workdir / "out" / "dataset.json").read_bytes()
    assert cli.main(["prepare", "--config", cfg]) == 0
    assert (workdir / "out" / "dataset.json").read_bytes() == first


def test_missing_input_exits_2(workdir, capsys):
    cfg = _config(workdir, data={"input": str(workdir / "absent.dat")})
    assert cli.main(["prepare", "--config", cfg]) == 2
    assert "absent.dat" in capsys.readouterr().err


def test_unknown_config_key_exits_2(workdir, capsys):
    path = workdir / "bad.json"
    path.write_text(json.dumps({"data": {"inptu": "x"}}))
    assert cli.main(["prepare", "--config", str(path)]) == 2
    assert "inptu" in capsys.readouterr().err


def test_missing_config_exits_2(workdir):
    assert cli.main(["prepare", "--config", str(workdir / "none.json")]) == 2


def test_train_without_dataset_exits_2(workdir, capsys):
    cfg = _config(workdir, output={"dir": str(workdir / "fresh")})
    assert cli.main(["train", "--config", cfg]) == 2
    assert "prepare" in capsys.readouterr().err


def test_train_writes_model_history_audit(workdir):
    cfg = _config(workdir, model={"kind": "mnl"})
    assert cli.main(["prepare", "--config", cfg]) == 0
    assert cli.main(["train", "--config", cfg]) == 0
    out = workdir / "out"
    assert (out / "mnl.model.json").exists()
    history = (out / "mnl.history.tsv").read_text().strip().split("\n")
    assert history[0].startswith("epoch\t")
    assert len(history) >= 3
    audit = (out / "mnl.audit.tsv").read_text().strip().split("\n")
    assert len(audit) == 1 + 18


def test_train_constrained_uses_id_prefix(workdir):
    cfg = _config(
        workdir,
        model={"kind": "mnl"},
        constraints={"enabled": True, "penalty_weight": 5.0, "pairs_per_constraint": 16},
    )
    assert cli.main(["prepare", "--config", cfg]) == 0
    assert cli.main(["train", "--config", cfg]) == 0
    assert (workdir / "out" / "c_mnl.model.json").exists()


def test_analyze_outputs_and_fingerprint_guard(workdir, capsys):
    cfg = _config(workdir, model={"kind": "mnl"}, evaluation={"audit_pairs": 64, "split": "test"})
    assert cli.main(["prepare", "--config", cfg]) == 0
    assert cli.main(["train", "--config", cfg]) == 0
    out = workdir / "out"
    model_path = str(out / "mnl.model.json")
    assert cli.main(["analyze", "--config", cfg, "--model", model_path]) == 0
    for alt_key in ("TRAIN_TT", "TRAIN_CO", "SM_TT", "SM_CO", "CAR_TT", "CAR_CO"):
        sweep = (out / f"mnl.sweep.{alt_key}.tsv").read_text().strip().split("\n")
        assert len(sweep) == 1 + 21
        q0 = [ln for ln in sweep[1:] if ln.startswith("0.0\t")]
        assert len(q0) == 1
        probs = [float(v) for v in q0[0].split("\t")[1:]]
        assert abs(sum(probs) - 1.0) < 1e-9
    assert (out / "mnl.monotonicity.tsv").exists()
    assert (out / "mnl.vot_stats.tsv").exists()
    analysis = json.loads((out / "mnl.analysis.json").read_text())
    assert set(analysis["vot"]) == {"train", "SM", "car"}
    for alt in analysis["vot"].values():
        assert "coefficient_ratio" in alt  # linear model carries the closed form

    # fingerprint mismatch: re-prepare with a different split seed
    cfg2 = _config(workdir, data={"seed": 99}, model={"kind": "mnl"})
    assert cli.main(["prepare", "--config", cfg2]) == 0
    rc = cli.main(["analyze", "--config", cfg2, "--model", model_path])
    assert rc == 2
    assert "fingerprint" in capsys.readouterr().err
    # restore the original dataset for later tests
    assert cli.main(["prepare", "--config", _config(workdir, model={"kind": "mnl"})]) == 0


def test_audit_command(workdir, capsys):
    cfg = _config(workdir, model={"kind": "mnl"})
    assert cli.main(["prepare", "--config", cfg]) == 0
    assert cli.main(["train", "--config", cfg]) == 0
    model_path = str(workdir / "out" / "mnl.model.json")
    assert cli.main(["audit", "--config", cfg, "--model", model_path]) == 0
    assert "violation fraction" in capsys.readouterr().out


def test_experiment_two_runs(workdir):
    cfg = _config(
        workdir,
        model={"kind": "mnl"},
        experiment={
            "runs": [
                {"id": "mnl", "kind": "mnl", "constrained": False},
                {"id": "c_mnl", "kind": "mnl", "constrained": True},
            ]
        },
        constraints={"penalty_weight": 5.0, "pairs_per_constraint": 16},
    )
    assert cli.main(["prepare", "--config", cfg]) == 0
    assert cli.main(["experiment", "--config", cfg]) == 0
    out = workdir / "out"
    table = (out / "nll_accuracy.tsv").read_text().strip().split("\n")
    assert len(table) == 3  # header + 2 runs
    assert table[0].split("\t")[0] == "model"
    for split in ("train", "validation", "test"):
        shares = (out / f"market_shares_{split}.tsv").read_text().strip().split("\n")
        assert len(shares) == 1 + 3 + 1  # header, alternatives, RMSE row
        assert shares[-1].startswith("RMSE")
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["runs"]) == {"mnl", "c_mnl"}
    for entry in summary["runs"].values():
        assert set(entry["metrics"]) == {"train", "validation", "test"}


def test_experiment_duplicate_ids_rejected(workdir, capsys):
    cfg = _config(
        workdir,
        experiment={"runs": [{"id": "a", "kind": "mnl", "constrained": False}] * 2},
    )
    assert cli.main(["prepare", "--config", cfg]) == 0
    assert cli.main(["experiment", "--config", cfg]) == 2
    assert "duplicate" in capsys.readouterr().err


def test_synth_survey_mode(workdir):
    cfg = _config(workdir, synth={"mode": "survey", "path": "gen.dat", "n_respondents": 30, "seed": 2})
    assert cli.main(["synth", "--config", cfg]) == 0
    raw = dataio.load_raw(str(workdir / "out" / "gen.dat"))
    assert raw.n_rows == 270


def test_synth_oracle_mode(workdir):
    out2 = str(workdir / "oracle_out")
    cfg = _config(workdir, synth={"mode": "mnl_oracle", "n": 500, "seed": 3})
    assert cli.main(["synth", "--config", cfg, "--out", out2]) == 0
    ds = dataio.Dataset.load(os.path.join(out2, "dataset.json"))
    assert ds.n == 500
    truth = json.loads(open(os.path.join(out2, "truth.json")).read())
    assert truth["beta_time"] == [-0.02, -0.02, -0.02]


def test_out_flag_overrides_directory(workdir):
    override = str(workdir / "elsewhere")
    cfg = _config(workdir)
    assert cli.main(["prepare", "--config", cfg, "--out", override]) == 0
    assert os.path.exists(os.path.join(override, "dataset.json"))
