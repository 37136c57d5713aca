import hashlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from nrrdd.cli import EXIT_CONFIG, EXIT_MISSING, EXIT_OK, main
from nrrdd.config import (ConfigError, ExperimentConfig, apply_overrides,
                          config_from_dict, config_to_dict, load_config, save_config)
from nrrdd.labels import read_store
from nrrdd.pipeline import (load_split, run_distill, run_train_teacher, run_transfer,
                            store_path, teacher_path)
from nrrdd.report import read_results, recover_rate, summary_table


def micro_config(out_dir: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.out_dir = out_dir
    cfg.dataset.per_class_train = 12
    cfg.dataset.per_class_test = 8
    cfg.teacher.epochs = 2
    cfg.cidd.k = 4
    cfg.cidd.t = 1
    cfg.ipc = 2
    cfg.refine.iterations = 3
    cfg.refine.batch = 20
    cfg.transfer.epochs = 2
    cfg.transfer.batch = 10
    return cfg


@pytest.fixture()
def micro_cfg_file(tmp_path):
    cfg = micro_config(str(tmp_path / "run"))
    path = tmp_path / "cfg.json"
    save_config(cfg, str(path))
    return str(path)


# ---------------------------------------------------------------------------
# config machinery
# ---------------------------------------------------------------------------

def test_config_roundtrip(tmp_path):
    cfg = micro_config("x")
    path = tmp_path / "c.json"
    save_config(cfg, str(path))
    loaded = load_config(str(path))
    assert config_to_dict(loaded) == config_to_dict(cfg)


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown"):
        config_from_dict({"no_such_field": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"refine": {"bogus": 2}})


def test_config_validation():
    with pytest.raises(ConfigError, match="beta"):
        config_from_dict({"beta": 3})
    with pytest.raises(ConfigError, match="label_mode"):
        config_from_dict({"label_mode": "xyz"})
    with pytest.raises(ConfigError, match="epsilon"):
        config_from_dict({"refine": {"epsilon": 1.5}})


def test_overrides():
    cfg = ExperimentConfig()
    apply_overrides(cfg, ["refine.epsilon=0.3", "dataset.per_class_train=50",
                          "label_mode=sl", "cidd.scale_range=[0.5, 1.0]"])
    assert cfg.refine.epsilon == 0.3
    assert cfg.dataset.per_class_train == 50
    assert cfg.label_mode == "sl"
    assert cfg.cidd.scale_range == (0.5, 1.0)
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["refine.nope=1"])
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["not-an-assignment"])


# ---------------------------------------------------------------------------
# pipeline + CLI
# ---------------------------------------------------------------------------

def _sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def test_cli_end_to_end(micro_cfg_file, tmp_path):
    assert main(["train-teacher", "--config", micro_cfg_file]) == EXIT_OK
    cfg = load_config(micro_cfg_file)
    tpath = teacher_path(cfg)
    assert os.path.exists(tpath)
    checksum = _sha(tpath)

    # idempotent rerun, then forced rerun reproduces identical bytes
    assert main(["train-teacher", "--config", micro_cfg_file]) == EXIT_OK
    assert _sha(tpath) == checksum
    assert main(["train-teacher", "--config", micro_cfg_file, "--force"]) == EXIT_OK
    assert _sha(tpath) == checksum

    assert main(["distill", "--config", micro_cfg_file, "--modes", "dbr,oh"]) == EXIT_OK
    out = os.path.join(cfg.out_dir, "distill_nrr_seed0")
    assert os.path.exists(os.path.join(out, "manifest.json"))
    assert os.path.exists(store_path(out, "dbr"))
    store = read_store(store_path(out, "dbr"), expect_mode="dbr")
    assert len(store) == 20  # ipc=2 x 10 classes

    assert main(["transfer", "--config", micro_cfg_file, "--mode", "dbr"]) == EXIT_OK
    assert main(["transfer", "--config", micro_cfg_file, "--mode", "oh"]) == EXIT_OK
    rows = read_results(cfg.out_dir)
    modes = [r["mode"] for r in rows if r["kind"] == "transfer"]
    assert set(modes) == {"dbr", "oh"}

    student = [f for f in os.listdir(cfg.out_dir) if f.startswith("student_")]
    assert len(student) == 2
    assert main(["eval", "--config", micro_cfg_file, "--snapshot",
                 os.path.join(cfg.out_dir, student[0])]) == EXIT_OK

    report_out = str(tmp_path / "report")
    assert main(["report", "--results", cfg.out_dir, "--out", report_out]) == EXIT_OK
    assert os.path.exists(os.path.join(report_out, "summary.txt"))
    assert os.path.exists(os.path.join(report_out, "accuracy_vs_ipc.png"))


def test_cli_distill_skip_nrr(micro_cfg_file):
    assert main(["train-teacher", "--config", micro_cfg_file]) == EXIT_OK
    assert main(["distill", "--config", micro_cfg_file, "--skip-nrr",
                 "--modes", "sl"]) == EXIT_OK
    cfg = load_config(micro_cfg_file)
    from nrrdd.discovery import load_manifest

    man = load_manifest(os.path.join(cfg.out_dir, "distill_cidd_seed0"))
    assert all(not r.refined for r in man.records)


def test_cli_distill_no_bn_loss(micro_cfg_file):
    assert main(["train-teacher", "--config", micro_cfg_file]) == EXIT_OK
    assert main(["distill", "--config", micro_cfg_file, "--no-bn-loss",
                 "--modes", "dbr"]) == EXIT_OK
    cfg = load_config(micro_cfg_file)
    man_dir = os.path.join(cfg.out_dir, "distill_nrr-nobn_seed0")
    assert os.path.exists(os.path.join(man_dir, "manifest.json"))


def test_cli_missing_artifacts_exit_code(micro_cfg_file):
    assert main(["transfer", "--config", micro_cfg_file]) == EXIT_MISSING
    assert main(["distill", "--config", micro_cfg_file]) == EXIT_MISSING
    assert main(["eval", "--config", micro_cfg_file, "--snapshot", "/no/such.nrrs"]) \
        == EXIT_MISSING


def test_cli_config_errors_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["train-teacher", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["train-teacher", "--set", "beta=3"]) == EXIT_CONFIG
    assert main(["train-teacher", "--config", str(tmp_path / "missing.json")]) \
        == EXIT_CONFIG


def test_cli_dataset_root_env_override(micro_cfg_file, tmp_path, monkeypatch):
    monkeypatch.setenv("NRRDD_DATA_ROOT", str(tmp_path / "data-root"))
    cfg = load_config(micro_cfg_file)
    cfg.dataset.name = "cifar10"
    with pytest.raises(FileNotFoundError, match="data-root"):
        load_split(cfg, "train")


def test_cli_init_config_and_help(tmp_path):
    path = tmp_path / "default.json"
    assert main(["init-config", str(path)]) == EXIT_OK
    cfg = load_config(str(path))
    assert cfg.refine.iterations == 2000
    assert cfg.refine.lr == 0.05
    assert cfg.refine.betas == (0.5, 0.9)
    assert cfg.refine.alpha_bn == 10.0
    assert cfg.refine.epsilon == 0.5
    assert cfg.refine.r == 0.4
    assert cfg.transfer.epochs == 300
    assert cfg.transfer.lr == 1e-3
    assert cfg.transfer.batch == 100


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "nrrdd.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("train-teacher", "distill", "transfer", "eval", "report", "sweep"):
        assert cmd in proc.stdout


def test_report_single_row(tmp_path):
    results = tmp_path / "results.jsonl"
    row = {"kind": "transfer", "tag": "nrr", "mode": "dbr", "arch": "convnet3",
           "ipc": 10, "seed": 0, "accuracy": 0.5, "store_bytes": 1000}
    results.write_text(json.dumps(row) + "\n")
    assert main(["report", "--results", str(results),
                 "--out", str(tmp_path / "rep")]) == EXIT_OK
    table = summary_table([row])
    for col in ("tag", "mode", "arch", "ipc", "seed", "accuracy", "store_bytes"):
        assert col in table.splitlines()[0]


def test_recover_rate_formula():
    rows = [{"kind": "transfer", "tag": "nrr", "mode": m, "seed": s, "accuracy": a}
            for m, s, a in [("oh", 0, 0.30), ("oh", 1, 0.32), ("oh", 2, 0.28),
                            ("sl", 0, 0.60), ("sl", 1, 0.62), ("sl", 2, 0.58),
                            ("dbr", 0, 0.45), ("dbr", 1, 0.47), ("dbr", 2, 0.43)]]
    assert recover_rate(rows, "nrr") == pytest.approx((0.45 - 0.30) / (0.60 - 0.30))


def test_sweep_cli(micro_cfg_file):
    assert main(["train-teacher", "--config", micro_cfg_file]) == EXIT_OK
    assert main(["sweep", "--config", micro_cfg_file, "--param", "refine.epsilon",
                 "--values", "0.3,0.7", "--seeds", "0", "--modes", "oh"]) == EXIT_OK
    cfg = load_config(micro_cfg_file)
    rows = [r for r in read_results(cfg.out_dir)
            if r.get("sweep_param") == "refine.epsilon"]
    assert {r["sweep_value"] for r in rows} == {0.3, 0.7}
