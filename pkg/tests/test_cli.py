"""Command-line pipeline: config assembly, artifacts, errors, determinism."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import pytest

from powerid import ConfigError
from powerid.cli import config_hash, effective_config, main


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    import os

    for key in [k for k in os.environ if k.startswith("POWERID_")]:
        monkeypatch.delenv(key)


def write_config(path: Path, doc: dict) -> str:
    path.write_text(json.dumps(doc, indent=2))
    return str(path)


def read_json(path: Path) -> dict:
    return json.loads(path.read_text())


def pipeline_config(root: Path, **overrides) -> dict:
    doc = {
        "seed": 0,
        "paths": {
            "traces": str(root / "traces.csv"),
            "model": str(root / "model_identified.json"),
            "traces_est": str(root / "traces_est.csv"),
            "checkpoint": str(root / "checkpoint.json"),
        },
        "simulate": {
            # cooler diagonal than the built-in demo model: quadratic
            # leakage at 3 W would push that one past its stable branch
            "model": {"unit_names": ["cpu", "gpu"],
                      "A": [[0.8, 0.02], [0.02, 0.8]],
                      "B": [[1.0, 0.1], [0.05, 0.9]]},
            "schedule": {"kind": "random_walk", "duration_samples": 300,
                         "levels": [1.0, 1.5], "walk_sd_W": 0.15, "p_max_W": 3.0},
            "misspec": {"leakage_quad_coeff": 0.002},
        },
        "train": {"hidden_widths": [8], "max_epochs": 12, "patience": 12},
        "evaluate": {"bench_iters": 0},
    }
    for key, val in overrides.items():
        doc.setdefault(key, {}).update(val)
    return doc


# ---- config assembly ----


def test_effective_config_defaults():
    cfg = effective_config(None, None, environ={})
    assert cfg["seed"] == 0
    assert cfg["train"]["max_epochs"] == 200
    assert cfg["identify"]["mode"] == "supervised"
    assert cfg["paths"]["traces"] is None


def test_effective_config_merges_file_and_flag(tmp_path):
    path = write_config(tmp_path / "c.json",
                        {"seed": 3, "train": {"max_epochs": 7}})
    cfg = effective_config(path, None, environ={})
    assert cfg["seed"] == 3
    assert cfg["train"]["max_epochs"] == 7
    assert cfg["train"]["batch_size"] == 64  # untouched default survives
    cfg = effective_config(path, 9, environ={})
    assert cfg["seed"] == 9  # the flag wins over the file


def test_effective_config_rejects_unknown_keys(tmp_path):
    path = write_config(tmp_path / "c.json", {"trian": {"max_epochs": 7}})
    with pytest.raises(ConfigError):
        effective_config(path, None, environ={})
    path = write_config(tmp_path / "c2.json", {"train": {"max_epoch": 7}})
    with pytest.raises(ConfigError):
        effective_config(path, None, environ={})


def test_effective_config_missing_file():
    with pytest.raises(ConfigError):
        effective_config("/no/such/config.json", None, environ={})


def test_effective_config_env_overrides():
    env = {"POWERID_TRAIN__MAX_EPOCHS": "5",
           "POWERID_IDENTIFY__MODE": "blind",
           "POWERID_SIMULATE__MISSPEC": '{"leakage_quad_coeff": 0.01}'}
    cfg = effective_config(None, None, environ=env)
    assert cfg["train"]["max_epochs"] == 5  # JSON-parsed to an int
    assert cfg["identify"]["mode"] == "blind"  # non-JSON stays a string
    assert cfg["simulate"]["misspec"] == {"leakage_quad_coeff": 0.01}


def test_effective_config_env_section_typo():
    with pytest.raises(ConfigError):
        effective_config(None, None, environ={"POWERID_TRIAN__MAX_EPOCHS": "5"})


def test_effective_config_rejects_non_integer_seed(tmp_path):
    path = write_config(tmp_path / "c.json", {"seed": True})
    with pytest.raises(ConfigError):
        effective_config(path, None, environ={})
    path = write_config(tmp_path / "c2.json", {"seed": "zero"})
    with pytest.raises(ConfigError):
        effective_config(path, None, environ={})


def test_config_hash_is_order_insensitive():
    a = {"seed": 1, "train": {"x": 2, "y": 3}}
    b = {"train": {"y": 3, "x": 2}, "seed": 1}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "seed": 2})


# ---- full pipeline ----


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    out = root / "out"
    cfg_path = write_config(root / "config.json", pipeline_config(out))
    for command in ("simulate", "identify", "abpi", "train", "evaluate"):
        code = main([command, "--config", cfg_path, "--out", str(out)])
        assert code == 0, f"{command} exited {code}"
    return out, cfg_path


EXPECTED_FILES = {
    "simulate": ["traces.csv", "model_true.json"],
    "identify": ["model_identified.json", "identify_report.json"],
    "abpi": ["traces_est.csv", "abpi_metrics.json"],
    "train": ["checkpoint.json", "history.csv"],
    "evaluate": ["metrics.json", "predictions.csv", "predictions.svg",
                 "training_loss.svg"],
}


def test_pipeline_artifacts_exist(pipeline):
    out, _ = pipeline
    for command, files in EXPECTED_FILES.items():
        assert (out / f"manifest_{command}.json").is_file()
        for name in files:
            assert (out / name).is_file(), f"{command} should write {name}"
    assert (out / "run.log").is_file()


def test_manifest_hashes_match_files(pipeline):
    out, _ = pipeline
    hashes = set()
    for command in EXPECTED_FILES:
        manifest = read_json(out / f"manifest_{command}.json")
        assert manifest["command"] == command
        assert manifest["seed"] == 0
        hashes.add(manifest["config_sha256"])
        for name, digest in manifest["artifacts"].items():
            actual = hashlib.sha256((out / name).read_bytes()).hexdigest()
            assert actual == digest, f"{command}: {name} drifted from its manifest"
    assert len(hashes) == 1  # one config, one hash everywhere


def test_json_artifacts_carry_config_hash(pipeline):
    out, _ = pipeline
    expected = read_json(out / "manifest_train.json")["config_sha256"]
    for name in ("identify_report.json", "abpi_metrics.json", "metrics.json"):
        assert read_json(out / name)["config_sha256"] == expected
    for name in ("predictions.svg", "training_loss.svg"):
        assert f"config_sha256={expected}" in (out / name).read_text()


def test_evaluate_reproduces_checkpoint_holdout(pipeline):
    out, _ = pipeline
    doc = read_json(out / "metrics.json")
    check = doc["holdout_check"]
    assert check["abs_diff_W"] <= 1e-12
    net = {m["component"]: m for m in doc["network_metrics"]}
    phys = {m["component"]: m for m in doc["physics_metrics"]}
    assert set(net) == {"cpu", "gpu", "all_units"}
    assert net["cpu"]["mae_W"] > 0.0
    assert phys["cpu"]["mae_W"] > 0.0


def test_history_csv_one_row_per_epoch(pipeline):
    out, _ = pipeline
    lines = (out / "history.csv").read_text().strip().splitlines()
    assert lines[0] == "epoch,train_total,train_data,train_phys,train_guide,val_total"
    assert len(lines) == 1 + 12


def test_run_log_is_chronological_sidecar(pipeline):
    out, _ = pipeline
    text = (out / "run.log").read_text()
    for command in EXPECTED_FILES:
        assert f"{command} start" in text
        assert f"{command} ok" in text


def test_predictions_csv_header(pipeline):
    out, _ = pipeline
    header = (out / "predictions.csv").read_text().splitlines()[0]
    assert header == ("time_s,truth_cpu,truth_gpu,physics_cpu,physics_gpu,"
                      "network_cpu,network_gpu")


# ---- determinism ----


def test_repeat_runs_are_byte_identical(tmp_path):
    import shutil

    # one config, run twice from scratch; only run.log may differ
    out = tmp_path / "out"
    cfg_path = write_config(tmp_path / "cfg.json", pipeline_config(out))

    def run_all() -> dict[str, bytes]:
        for command in ("simulate", "identify", "abpi", "train"):
            assert main([command, "--config", cfg_path, "--out", str(out)]) == 0
        return {p.name: p.read_bytes() for p in out.iterdir()}

    first = run_all()
    shutil.rmtree(out)
    second = run_all()
    assert sorted(first) == sorted(second)
    for name in first:
        if name == "run.log":  # timestamps live here and only here
            continue
        assert first[name] == second[name], name


def test_seed_flag_changes_hash_and_artifacts(tmp_path):
    out = tmp_path / "out"
    cfg_path = write_config(tmp_path / "cfg.json", pipeline_config(out))
    assert main(["simulate", "--config", cfg_path, "--out", str(out)]) == 0
    first = (out / "traces.csv").read_bytes()
    hash0 = read_json(out / "manifest_simulate.json")["config_sha256"]
    assert main(["simulate", "--config", cfg_path, "--seed", "1",
                 "--out", str(out)]) == 0
    assert read_json(out / "manifest_simulate.json")["config_sha256"] != hash0
    assert read_json(out / "manifest_simulate.json")["seed"] == 1
    assert (out / "traces.csv").read_bytes() != first


def test_env_override_reaches_training(tmp_path, monkeypatch):
    out = tmp_path / "out"
    cfg_path = write_config(tmp_path / "cfg.json", pipeline_config(out))
    for command in ("simulate", "identify", "abpi"):
        assert main([command, "--config", cfg_path, "--out", str(out)]) == 0
    monkeypatch.setenv("POWERID_TRAIN__MAX_EPOCHS", "3")
    assert main(["train", "--config", cfg_path, "--out", str(out)]) == 0
    lines = (out / "history.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 3


# ---- error paths ----


def expect_error(capsys, argv: list[str], exit_code: int, error: str):
    code = main(argv)
    err = capsys.readouterr().err.strip()
    payload = json.loads(err)
    assert code == exit_code
    assert payload["exit_code"] == exit_code
    assert payload["error"] == error
    assert payload["command"] == argv[0]
    return payload


def test_missing_config_file_is_a_config_error(tmp_path, capsys):
    expect_error(capsys, ["train", "--config", str(tmp_path / "nope.json"),
                          "--out", str(tmp_path / "o")], 2, "ConfigError")


def test_missing_input_is_a_config_error(tmp_path, capsys):
    out = tmp_path / "out"
    cfg_path = write_config(tmp_path / "cfg.json", pipeline_config(out))
    # identify before simulate: the trace CSV does not exist yet
    expect_error(capsys, ["identify", "--config", cfg_path, "--out", str(out)],
                 2, "ConfigError")


def test_schedule_model_mismatch(tmp_path, capsys):
    out = tmp_path / "out"
    doc = pipeline_config(out)
    doc["simulate"]["schedule"]["levels"] = [1.0, 1.5, 2.0]  # 3 units vs 2
    cfg_path = write_config(tmp_path / "cfg.json", doc)
    payload = expect_error(capsys, ["simulate", "--config", cfg_path,
                                    "--out", str(out)], 2, "DimensionMismatch")
    assert "3" in payload["message"]


def test_unknown_config_key_fails_before_work(tmp_path, capsys):
    cfg_path = write_config(tmp_path / "cfg.json", {"trian": {"max_epochs": 2}})
    expect_error(capsys, ["simulate", "--config", cfg_path,
                          "--out", str(tmp_path / "o")], 2, "ConfigError")


def test_numeric_blowup_maps_to_exit_3(pipeline, tmp_path, capsys, monkeypatch):
    src, cfg_path = pipeline
    out = tmp_path / "boom"
    monkeypatch.setenv("POWERID_TRAIN__LEARNING_RATE", "1e150")
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        expect_error(capsys, ["train", "--config", cfg_path, "--out", str(out)],
                     3, "NonFiniteLoss")
    assert "failed: NonFiniteLoss" in (out / "run.log").read_text()


def test_unstable_model_maps_to_exit_3(tmp_path, capsys):
    out = tmp_path / "out"
    doc = pipeline_config(out)
    doc["simulate"]["model"] = {"unit_names": ["cpu", "gpu"],
                                "A": [[1.2, 0.0], [0.0, 0.9]],
                                "B": [[1.0, 0.0], [0.0, 1.0]]}
    cfg_path = write_config(tmp_path / "cfg.json", doc)
    expect_error(capsys, ["simulate", "--config", cfg_path, "--out", str(out)],
                 3, "UnstableModel")


def test_unknown_command_is_rejected_by_the_parser(capsys):
    with pytest.raises(SystemExit):
        main(["frobnicate", "--out", "/tmp/x"])
