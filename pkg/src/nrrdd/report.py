"""Result aggregation: summary tables, recover rates, and static plots."""
from __future__ import annotations

import json
import os
from collections import defaultdict

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RESULT_COLUMNS = ["tag", "mode", "arch", "ipc", "seed", "accuracy", "store_bytes"]


def read_results(path: str) -> list[dict]:
    """Load line-delimited result rows from a file or a directory holding results.jsonl."""
    if os.path.isdir(path):
        path = os.path.join(path, "results.jsonl")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no results found at {path}")
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def transfer_rows(rows: list[dict]) -> list[dict]:
    return [r for r in rows if r.get("kind") == "transfer"]


def median_accuracy(rows: list[dict], **filters) -> float:
    """Median accuracy over seeds of the rows matching all filter key/values."""
    vals = [r["accuracy"] for r in transfer_rows(rows)
            if all(r.get(k) == v for k, v in filters.items())]
    if not vals:
        raise ValueError(f"no transfer rows match {filters}")
    return float(np.median(vals))


def recover_rate(rows: list[dict], tag: str, **filters) -> float:
    """(DBR - one-hot) / (soft-label - one-hot) on per-mode median accuracies."""
    dbr = median_accuracy(rows, tag=tag, mode="dbr", **filters)
    oh = median_accuracy(rows, tag=tag, mode="oh", **filters)
    sl = median_accuracy(rows, tag=tag, mode="sl", **filters)
    if sl - oh == 0:
        return float("nan")
    return (dbr - oh) / (sl - oh)


def summary_table(rows: list[dict]) -> str:
    """Aligned text table of transfer rows, fixed column schema."""
    body = transfer_rows(rows)
    if not body:
        return "(no transfer rows)"
    widths = {c: len(c) for c in RESULT_COLUMNS}
    formatted = []
    for r in body:
        line = {}
        for c in RESULT_COLUMNS:
            v = r.get(c)
            line[c] = f"{v:.4f}" if isinstance(v, float) else str(v)
            widths[c] = max(widths[c], len(line[c]))
        formatted.append(line)
    head = "  ".join(c.ljust(widths[c]) for c in RESULT_COLUMNS)
    sep = "  ".join("-" * widths[c] for c in RESULT_COLUMNS)
    lines = [head, sep]
    for line in formatted:
        lines.append("  ".join(line[c].ljust(widths[c]) for c in RESULT_COLUMNS))
    return "\n".join(lines)


def _group_median(rows, key_fields, value_field="accuracy"):
    groups = defaultdict(list)
    for r in rows:
        groups[tuple(r.get(k) for k in key_fields)].append(r[value_field])
    return {k: float(np.median(v)) for k, v in groups.items()}


def plot_accuracy_vs_ipc(rows: list[dict], out_path: str) -> None:
    body = transfer_rows(rows)
    med = _group_median(body, ("mode", "tag", "ipc"))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    series = defaultdict(list)
    for (mode, tag, ipc), acc in sorted(med.items(), key=lambda kv: kv[0][2]):
        series[f"{tag}/{mode}"].append((ipc, acc))
    for label, pts in sorted(series.items()):
        xs, ys = zip(*pts)
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xlabel("images per class")
    ax.set_ylabel("median accuracy")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def plot_storage(rows: list[dict], out_path: str) -> None:
    body = transfer_rows(rows)
    med = _group_median(body, ("mode",), value_field="store_bytes")
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    modes = sorted(k[0] for k in med)
    ax.bar(modes, [med[(m,)] for m in modes])
    ax.set_ylabel("store size (bytes)")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def plot_sensitivity(rows: list[dict], param: str, out_path: str) -> None:
    """Accuracy vs swept value with the best (interior) point highlighted."""
    body = [r for r in transfer_rows(rows) if r.get("sweep_param") == param]
    if not body:
        raise ValueError(f"no sweep rows for parameter {param}")
    med = _group_median(body, ("sweep_value",))
    xs = sorted(v[0] for v in med)
    ys = [med[(x,)] for x in xs]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(xs, ys, marker="o")
    best = int(np.argmax(ys))
    ax.scatter([xs[best]], [ys[best]], color="crimson", zorder=3,
               label=f"best @ {xs[best]}")
    ax.set_xlabel(param)
    ax.set_ylabel("median accuracy")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def write_report(results_dir: str, out_dir: str | None = None) -> list[str]:
    """Emit summary.txt plus whatever plots the rows support; returns written paths."""
    rows = read_results(results_dir)
    if not transfer_rows(rows):
        raise ValueError("no transfer result rows to report on")
    out_dir = out_dir or os.path.join(
        results_dir if os.path.isdir(results_dir) else os.path.dirname(results_dir),
        "report")
    os.makedirs(out_dir, exist_ok=True)
    written = []

    summary = summary_table(rows)
    tags = sorted({r["tag"] for r in transfer_rows(rows)})
    recover_lines = []
    for tag in tags:
        modes = {r["mode"] for r in transfer_rows(rows) if r["tag"] == tag}
        if {"dbr", "oh", "sl"} <= modes:
            recover_lines.append(f"recover[{tag}] = {recover_rate(rows, tag):.3f}")
    path = os.path.join(out_dir, "summary.txt")
    with open(path, "w") as f:
        f.write(summary + "\n")
        if recover_lines:
            f.write("\n" + "\n".join(recover_lines) + "\n")
    written.append(path)

    p = os.path.join(out_dir, "accuracy_vs_ipc.png")
    plot_accuracy_vs_ipc(rows, p)
    written.append(p)
    p = os.path.join(out_dir, "storage_bytes.png")
    plot_storage(rows, p)
    written.append(p)
    for param in sorted({r.get("sweep_param") for r in transfer_rows(rows)} - {None}):
        p = os.path.join(out_dir, f"sensitivity_{param.replace('.', '_')}.png")
        plot_sensitivity(rows, param, p)
        written.append(p)
    return written
