"""End-to-end orchestration shared by the CLI, the demos, and the acceptance suite."""
from __future__ import annotations

import copy
import json
import os

import numpy as np

from .config import ConfigError, ExperimentConfig, apply_overrides, config_to_dict
from .data import ImageDataset, load_dataset, subset_dataset
from .discovery import (SyntheticManifest, discover, load_manifest, random_real_records,
                        save_manifest)
from .labels import label_payload_bytes, read_store, relabel, write_store
from .refine import refine_dataset
from .snapshot import ModelSnapshot
from .teacher import train_teacher
from .transfer import evaluate, train_student

DATA_ROOT_ENV = "NRRDD_DATA_ROOT"


class MissingArtifactError(RuntimeError):
    pass


def load_split(cfg: ExperimentConfig, split: str) -> ImageDataset:
    ds_cfg = cfg.dataset
    root = os.environ.get(DATA_ROOT_ENV, ds_cfg.root)
    per_class = ds_cfg.per_class_train if split == "train" else ds_cfg.per_class_test
    ds = load_dataset(ds_cfg.name, root=root, split=split, num_classes=ds_cfg.num_classes,
                      per_class=per_class, image_hw=ds_cfg.image_hw, seed=ds_cfg.seed)
    if ds_cfg.class_subset is not None or ds_cfg.per_class_limit is not None:
        ds = subset_dataset(ds, ds_cfg.class_subset, ds_cfg.per_class_limit)
    return ds


def teacher_path(cfg: ExperimentConfig) -> str:
    return os.path.join(cfg.out_dir, f"teacher_{cfg.teacher_arch}_seed{cfg.seed}.nrrs")


def distill_dir(cfg: ExperimentConfig, tag: str) -> str:
    return os.path.join(cfg.out_dir, f"distill_{tag}_seed{cfg.seed}")


def store_path(dist_dir: str, mode: str) -> str:
    return os.path.join(dist_dir, f"store_{mode}.nrrd")


def student_path(cfg: ExperimentConfig, tag: str, mode: str) -> str:
    return os.path.join(cfg.out_dir,
                        f"student_{cfg.student_arch}_{tag}_{mode}_seed{cfg.seed}.nrrs")


def results_path(cfg: ExperimentConfig) -> str:
    return os.path.join(cfg.out_dir, "results.jsonl")


def append_result(cfg: ExperimentConfig, row: dict) -> None:
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(results_path(cfg), "a") as f:
        f.write(json.dumps(row, sort_keys=True) + "\n")


def run_train_teacher(cfg: ExperimentConfig, force: bool = False) -> str:
    """Train (or reuse) the teacher for this config's seed; returns snapshot path."""
    path = teacher_path(cfg)
    if os.path.exists(path) and not force:
        return path
    train = load_split(cfg, "train")
    test = load_split(cfg, "test")
    snap = train_teacher(train, cfg.teacher_arch, cfg.teacher, seed=cfg.seed,
                         eval_dataset=test)
    os.makedirs(cfg.out_dir, exist_ok=True)
    snap.save(path)
    append_result(cfg, {"kind": "teacher", "arch": cfg.teacher_arch, "seed": cfg.seed,
                        "accuracy": snap.metadata.get("accuracy"),
                        "final_loss": snap.metadata.get("final_loss")})
    return path


def default_tag(cfg: ExperimentConfig, skip_nrr: bool = False,
                no_bn_loss: bool = False) -> str:
    if cfg.random_baseline:
        return "rand"
    if skip_nrr:
        return "cidd"
    if no_bn_loss:
        return "nrr-nobn"
    return "nrr"


def run_distill(cfg: ExperimentConfig, skip_nrr: bool = False, no_bn_loss: bool = False,
                modes: list[str] | None = None, tag: str | None = None,
                force: bool = False) -> str:
    """CIDD -> (optional) refinement -> relabel into one store per requested mode.

    Returns the distillation directory holding manifest.json, images/ and stores.
    """
    tag = tag or default_tag(cfg, skip_nrr, no_bn_loss)
    modes = modes or [cfg.label_mode]
    out = distill_dir(cfg, tag)
    tpath = teacher_path(cfg)
    if not os.path.exists(tpath):
        raise MissingArtifactError(f"teacher snapshot missing: {tpath} (run train-teacher)")
    manifest_file = os.path.join(out, "manifest.json")
    if os.path.exists(manifest_file) and not force:
        manifest = load_manifest(out)
        records = manifest.records
        snap = ModelSnapshot.load(tpath)
    else:
        snap = ModelSnapshot.load(tpath)
        train = load_split(cfg, "train")
        if cfg.random_baseline:
            records = random_real_records(train, cfg.ipc, seed=cfg.seed)
        else:
            records = discover(train, snap, cfg.ipc, cfg.beta, cfg.cidd, seed=cfg.seed)
        if not skip_nrr and not cfg.random_baseline:
            refine_cfg = copy.deepcopy(cfg.refine)
            refine_cfg.seed = cfg.seed
            if no_bn_loss:
                refine_cfg.alpha_bn = 0.0
            records = refine_dataset(snap, records, refine_cfg)
        manifest = SyntheticManifest(
            records=records, num_classes=snap.num_classes, image_shape=snap.input_shape,
            norm_mean=snap.norm_mean, norm_std=snap.norm_std,
            source_name=cfg.dataset.name, seed=cfg.seed,
            config=config_to_dict(cfg))
        os.makedirs(out, exist_ok=True)
    for mode in modes:
        spath = store_path(out, mode)
        if os.path.exists(spath) and not force:
            continue
        store = relabel(snap, records, mode, pairs_per_image=cfg.pairs_per_image,
                        seed=cfg.seed, mix_method=cfg.refine.mix_method,
                        allow_unrefined=skip_nrr or cfg.random_baseline,
                        same_class=cfg.refine.partner_same_class)
        os.makedirs(out, exist_ok=True)
        write_store(store, spath)
    save_manifest(manifest, out)
    return out


def run_transfer(cfg: ExperimentConfig, tag: str | None = None, mode: str | None = None,
                 force: bool = False, extra_row: dict | None = None) -> dict:
    """Train a student from an existing store and evaluate it; appends a result row."""
    tag = tag or default_tag(cfg)
    mode = mode or cfg.label_mode
    out = distill_dir(cfg, tag)
    spath = store_path(out, mode)
    if not os.path.exists(os.path.join(out, "manifest.json")):
        raise MissingArtifactError(f"synthetic manifest missing: {out} (run distill)")
    if not os.path.exists(spath):
        raise MissingArtifactError(f"label store missing: {spath} (run distill --modes {mode})")
    manifest = load_manifest(out)
    store = read_store(spath, expect_mode=mode)
    sp = student_path(cfg, tag, mode)
    tcfg = copy.deepcopy(cfg.transfer)
    tcfg.seed = cfg.seed
    if os.path.exists(sp) and not force:
        student = ModelSnapshot.load(sp)
    else:
        student = train_student(store, manifest, cfg.student_arch, tcfg)
        student.save(sp)
    test = load_split(cfg, "test")
    acc = evaluate(student, test)
    row = {
        "kind": "transfer", "tag": tag, "mode": mode, "arch": cfg.student_arch,
        "ipc": cfg.ipc, "beta": cfg.beta, "seed": cfg.seed, "accuracy": acc,
        "store_bytes": os.path.getsize(spath),
        "label_payload_bytes": label_payload_bytes(mode, store.num_classes) * len(store),
        "epsilon": cfg.refine.epsilon, "r": cfg.refine.r,
        "alpha_lr": cfg.refine.alpha_lr, "alpha_dbr": cfg.transfer.alpha_dbr,
        "iterations": cfg.refine.iterations,
    }
    if extra_row:
        row.update(extra_row)
    append_result(cfg, row)
    return row


def run_eval(cfg: ExperimentConfig, snapshot_file: str) -> float:
    if not os.path.exists(snapshot_file):
        raise MissingArtifactError(f"snapshot missing: {snapshot_file}")
    snap = ModelSnapshot.load(snapshot_file)
    test = load_split(cfg, "test")
    return evaluate(snap, test)


def run_sweep(cfg: ExperimentConfig, param: str, values: list, seeds: list[int],
              modes: list[str] | None = None, force: bool = False) -> list[dict]:
    """Grid over one config parameter x seeds; distills and transfers each cell."""
    modes = modes or [cfg.label_mode]
    short = param.split(".")[-1]
    rows = []
    for seed in seeds:
        for value in values:
            sub = apply_overrides(copy.deepcopy(cfg), [f"{param}={json.dumps(value)}"])
            sub.seed = int(seed)
            run_train_teacher(sub)
            tag = f"{short}{value}"
            run_distill(sub, modes=modes, tag=tag, force=force)
            for mode in modes:
                rows.append(run_transfer(sub, tag=tag, mode=mode, force=force,
                                         extra_row={"sweep_param": param,
                                                    "sweep_value": value}))
    return rows
