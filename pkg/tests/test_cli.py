import json

import pytest

from sleepcbm import __version__, io
from sleepcbm.cli import PREDICTION_COLUMNS, config_hash, load_config, main

RATES = [[0.5, 5], [5, 15], [15, 30], [30, 36]]
TINY = {
    "cohort": {"name": "tiny", "synth": {"n_studies": 24, "duration_s": 1800, "seed": 3,
                                         "event_rate_ranges": RATES}},
    "ood_cohorts": [],
    "fractions": [0.5, 0.25, 0.25],
    "slam": {"n_conv_blocks": 2, "filters_per_block": [4, 4], "kernel_sizes": [5, 5],
             "lstm_hidden": 3, "attention_units": 3, "epochs": 1},
    "regressor": {"max_epochs": 100},
    "preprocess": {"target_len": 1800},
    "sweep_grid": [50, 100],
    "intervention_taus": [0, 1000],
    "importance_repeats": 1,
    "bootstrap_n": 10,
    "n_permutations": 20,
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY))
    return path


def run(*argv):
    return main([str(a) for a in argv])


def _workflow(out, config):
    cohort = out / "synth" / "cohort"
    steps = [
        ("synth", "--out-dir", out / "synth"),
        ("oracle", "--input", cohort, "--out-dir", out / "oracle"),
        ("train-slam", "--input", cohort, "--out-dir", out / "slam"),
        ("train-reg", "--input", cohort, "--slam-model", out / "slam" / "slam_model",
         "--out-dir", out / "reg"),
        ("predict", "--input", cohort, "--slam-model", out / "slam" / "slam_model",
         "--reg-model", out / "reg" / "reg_model", "--saliency", "--out-dir", out / "pred"),
        ("evaluate", "--predictions", out / "pred" / "predictions.csv",
         "--out-dir", out / "eval"),
    ]
    for step in steps:
        assert run(*step, "--config", config, "--seed", 42) == 0, step[0]


def test_end_to_end_and_determinism(tmp_path, config_file):
    a, b = tmp_path / "a", tmp_path / "b"
    _workflow(a, config_file)
    _workflow(b, config_file)
    csvs = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    assert len(csvs) > 24 * 2
    for rel in csvs:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    for rel in ("slam/slam_model/params.bin", "reg/reg_model/params.bin"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes()

    rows = io.read_table(a / "pred" / "predictions.csv")
    assert tuple(rows[0]) == PREDICTION_COLUMNS and len(rows) == 24
    sal = io.read_table(a / "pred" / "saliency" / f"{rows[0]['id']}.csv")
    assert list(sal[0]) == ["t_s", "saliency"] and len(sal) == 1800
    assert all(0 <= float(r["saliency"]) <= 1 for r in sal)
    for name in ("agreement", "classification", "confusion", "bland_altman_points",
                 "parity_points"):
        assert (a / "eval" / f"{name}.csv").exists()
    history = io.read_table(a / "slam" / "history.csv")
    assert list(history[0]) == ["epoch", "train_mae", "val_mae"]

    manifest = json.loads((a / "slam" / "run_manifest.json").read_text())
    assert manifest["version"] == __version__ and manifest["seed"] == 42
    assert manifest["config_hash"] == config_hash(load_config(config_file, 42))
    assert manifest["command"] == "train-slam"


def test_train_reg_from_concept_csv(tmp_path, config_file):
    assert run("synth", "--config", config_file, "--out-dir", tmp_path / "s") == 0
    cohort = tmp_path / "s" / "cohort"
    assert run("oracle", "--input", cohort, "--out-dir", tmp_path / "o") == 0
    assert run("train-reg", "--config", config_file, "--input", cohort, "--concepts",
               tmp_path / "o" / "concepts.csv", "--out-dir", tmp_path / "r") == 0
    manifest = json.loads((tmp_path / "r" / "run_manifest.json").read_text())
    assert manifest["concept_source"].endswith("concepts.csv")
    assert run("preprocess", "--config", config_file, "--input", cohort,
               "--out-dir", tmp_path / "p") == 0
    assert len(list((tmp_path / "p" / "preprocessed").glob("*.csv"))) == 24


@pytest.mark.parametrize("kind", ["corruption", "sweep", "intervention", "fusion",
                                  "importance", "bmi"])
def test_ablations(tmp_path, config_file, kind):
    assert run("ablate", kind, "--config", config_file, "--out-dir", tmp_path) == 0
    assert (tmp_path / "run_manifest.json").exists()
    assert len(list(tmp_path.glob("*.csv"))) >= 1


def test_seed_changes_hash(config_file):
    assert config_hash(load_config(config_file, 1)) != config_hash(load_config(config_file, 2))
    assert config_hash(load_config(config_file, 1)) == config_hash(load_config(config_file, 1))


def test_validation_errors_exit_1(tmp_path, config_file):
    assert run("bogus") == 1
    assert run("predict", "--out-dir", tmp_path) == 1            # missing required flags
    assert run("oracle", "--input", tmp_path / "nope", "--out-dir", tmp_path) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("synth", "--config", bad, "--out-dir", tmp_path) == 1
    bad.write_text(json.dumps({"fractions": [0.9, 0.9, 0.9]}))
    assert run("synth", "--config", bad, "--out-dir", tmp_path) == 1
    assert run("synth", "--config", tmp_path / "missing.json", "--out-dir", tmp_path) == 1
    preds = tmp_path / "p.csv"
    preds.write_text("id,pred_ahi\na,1\n")
    assert run("evaluate", "--predictions", preds, "--out-dir", tmp_path) == 1


def test_runtime_failure_exit_2(tmp_path):
    cfg = dict(TINY)
    cfg["cohort"] = {"name": "x", "synth": {"n_studies": 2, "duration_s": 600,
                                            "severity_mix": [0, 0, 0, 1]}}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert run("synth", "--config", path, "--out-dir", tmp_path) == 2
