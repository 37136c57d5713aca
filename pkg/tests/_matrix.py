"""Desk-scale experiment matrix shared by the acceptance criteria.

Runs the full pipeline (teacher, discovery, refinement ablations, transfers)
over three seeds. Every artifact is produced through the public pipeline and
cached on disk: point NRRDD_ACCEPT_DIR at a directory to keep results across
pytest invocations; otherwise a fresh temp directory is used per session.
"""
from __future__ import annotations

import copy
import json
import os

from nrrdd.config import ExperimentConfig
from nrrdd.pipeline import run_distill, run_train_teacher, run_transfer, results_path
from nrrdd.report import median_accuracy, recover_rate, transfer_rows

SEEDS = (0, 1, 2)

# Desk profile: 10-class 32x32 benchmark, IPC=10, small ConvNet teacher/student.
# Refinement runs the CPU-reduced iteration count the acceptance criteria allow.
DESK = {
    "per_class_train": 200,
    "per_class_test": 200,
    "dataset_seed": 1234,
    "teacher_epochs": 40,
    "ipc": 10,
    "beta": 1,
    "iterations": 200,
    "pairs_per_image": 4,
    "transfer_epochs": 300,
}


def desk_config(out_dir: str, seed: int) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.out_dir = out_dir
    cfg.seed = seed
    cfg.dataset.per_class_train = DESK["per_class_train"]
    cfg.dataset.per_class_test = DESK["per_class_test"]
    cfg.dataset.seed = DESK["dataset_seed"]
    cfg.teacher.epochs = DESK["teacher_epochs"]
    cfg.ipc = DESK["ipc"]
    cfg.beta = DESK["beta"]
    cfg.refine.iterations = DESK["iterations"]
    cfg.pairs_per_image = DESK["pairs_per_image"]
    cfg.transfer.epochs = DESK["transfer_epochs"]
    return cfg


def _have_row(cfg: ExperimentConfig, tag: str, mode: str) -> bool:
    path = results_path(cfg)
    if not os.path.exists(path):
        return False
    for line in open(path):
        r = json.loads(line)
        if (r.get("kind") == "transfer" and r.get("tag") == tag
                and r.get("mode") == mode and r.get("seed") == cfg.seed):
            return True
    return False


def _transfer_once(cfg: ExperimentConfig, tag: str, mode: str) -> None:
    if not _have_row(cfg, tag, mode):
        run_transfer(cfg, tag=tag, mode=mode)


def run_seed(root: str, seed: int) -> None:
    cfg = desk_config(os.path.join(root, f"seed{seed}"), seed)
    run_train_teacher(cfg)

    rand = copy.deepcopy(cfg)
    rand.random_baseline = True
    run_distill(rand, modes=["sl"])
    _transfer_once(rand, "rand", "sl")

    run_distill(cfg, skip_nrr=True, modes=["sl"])
    _transfer_once(cfg, "cidd", "sl")

    run_distill(cfg, modes=["sl", "oh", "cl", "dbr"])
    for mode in ("sl", "oh", "cl", "dbr"):
        _transfer_once(cfg, "nrr", mode)

    nolr = copy.deepcopy(cfg)
    nolr.refine.alpha_lr = 0.0
    run_distill(nolr, modes=["dbr"], tag="nolr")
    _transfer_once(nolr, "nolr", "dbr")

    for eps in (0.1, 0.9):
        sub = copy.deepcopy(cfg)
        sub.refine.epsilon = eps
        run_distill(sub, modes=["dbr"], tag=f"eps{eps}")
        _transfer_once(sub, f"eps{eps}", "dbr")

    for r in (0.1, 0.7):
        sub = copy.deepcopy(cfg)
        sub.refine.r = r
        sub.transfer.r = r
        run_distill(sub, modes=["dbr"], tag=f"r{r}")
        _transfer_once(sub, f"r{r}", "dbr")


def collect_rows(root: str) -> list[dict]:
    rows = []
    for seed in SEEDS:
        path = os.path.join(root, f"seed{seed}", "results.jsonl")
        if os.path.exists(path):
            with open(path) as f:
                rows.extend(json.loads(line) for line in f if line.strip())
    return rows


def run_matrix(root: str) -> list[dict]:
    for seed in SEEDS:
        run_seed(root, seed)
    return collect_rows(root)


def seed_accuracies(rows: list[dict], tag: str, mode: str) -> dict[int, float]:
    out = {}
    for r in transfer_rows(rows):
        if r["tag"] == tag and r["mode"] == mode:
            out[r["seed"]] = r["accuracy"]
    return out


__all__ = ["DESK", "SEEDS", "desk_config", "run_matrix", "collect_rows",
           "seed_accuracies", "median_accuracy", "recover_rate"]
