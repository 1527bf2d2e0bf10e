"""Figures and a summary table from persisted experiment artifacts only."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..capture.signature import reconstruct_token_delays
from ..errors import DataError
from ..specsim import NS_PER_MS
from ..trace import read_jsonl
from .experiment import group_by_label, read_metrics, summarize

DELAY_POSITIONS = 50


@dataclass
class ReportResult:
    figures: list[Path] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)
    summary_path: Path | None = None


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "timinglab"
    return plt


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    _plt().close(fig)
    return path


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError("bad-metrics", f"{path} is empty")
    return rows[0], rows[1:]


def pr_figure(csv_path: Path, out: Path) -> tuple[Path, float]:
    _, rows = _read_csv(csv_path)
    pr = np.array(rows, float).reshape(-1, 3)
    prec, rec = pr[:, 1], pr[:, 2]
    # average precision over the recorded thresholds (sorted by recall)
    order = np.argsort(rec, kind="stable")
    r, p = rec[order], prec[order]
    auc = float(np.sum(np.diff(np.r_[0.0, r]) * p))
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.step(r, p, where="post")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.05)
    ax.annotate(f"AUC = {auc:.3f}", (0.05, 0.08), xycoords="axes fraction")
    return _save(fig, out), auc


def confusion_matrix(csv_path: Path) -> tuple[list[str], np.ndarray]:
    header, rows = _read_csv(csv_path)
    return header[1:], np.array([[int(x) for x in r[1:]] for r in rows], int)


def confusion_figure(csv_path: Path, out: Path) -> Path:
    classes, cm = confusion_matrix(csv_path)
    norm = cm / np.maximum(cm.sum(axis=1, keepdims=True), 1)
    plt = _plt()
    fig, ax = plt.subplots(figsize=(1.2 + 0.45 * len(classes), 1 + 0.45 * len(classes)))
    ax.imshow(norm, cmap="Blues", vmin=0, vmax=1)
    ax.set_xticks(range(len(classes)), classes, rotation=90, fontsize=7)
    ax.set_yticks(range(len(classes)), classes, fontsize=7)
    for i, j in zip(*np.nonzero(cm)):
        ax.text(j, i, str(cm[i, j]), ha="center", va="center", fontsize=6)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    return _save(fig, out)


def delay_overlay_figure(jsonl: Path, out: Path, positions: int = DELAY_POSITIONS) -> Path:
    """Mean inter-token delay at each output position, one line per class."""
    by_label = group_by_label(read_jsonl(jsonl))
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for label, traces in by_label.items():
        mat = np.full((len(traces), positions), np.nan)
        for i, t in enumerate(traces):
            d = reconstruct_token_delays(t, None).inter_token_delays[:positions] / NS_PER_MS
            mat[i, :d.size] = d
        ax.plot(np.arange(1, positions + 1), np.nanmean(mat, axis=0), label=label, lw=1)
    ax.set_xlabel("token position")
    ax.set_ylabel("mean delay (ms)")
    ax.legend(fontsize=7)
    return _save(fig, out)


def tradeoff_figure(csv_path: Path, out: Path) -> Path:
    header, rows = _read_csv(csv_path)
    data = {h: np.array([float(r[i]) for r in rows]) for i, h in enumerate(header)}
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(data["overhead_pct"], data["latency_ms_mean"], "o-")
    for iv, x, y in zip(data["interval_ms"], data["overhead_pct"], data["latency_ms_mean"]):
        ax.annotate(f"{iv:g} ms", (x, y), fontsize=8)
    ax.set_xscale("symlog")
    ax.set_yscale("symlog")
    ax.set_xlabel("bandwidth overhead (%)")
    ax.set_ylabel("added latency per token (ms)")
    return _save(fig, out)


def report(metrics_dir: str | Path) -> ReportResult:
    """Render every figure the directory has inputs for and write summary.csv.

    Reads ``metrics.csv``, ``pr/*.csv``, ``confusion/*.csv``,
    ``traces/*.jsonl`` and ``sweep.csv``; figures go to ``figures/``.
    """
    d = Path(metrics_dir)
    metrics = d / "metrics.csv"
    sweep = d / "sweep.csv"
    inputs = [metrics, sweep, *d.glob("pr/*.csv"), *d.glob("confusion/*.csv"), *d.glob("traces/*.jsonl")]
    if not d.is_dir() or not any(p.exists() for p in inputs):
        raise DataError("no-metrics", str(d))
    figs = d / "figures"
    figs.mkdir(exist_ok=True)
    res = ReportResult()
    rows = read_metrics(metrics) if metrics.exists() else []
    scenario = rows[0]["scenario"] if rows else "report"
    for p in sorted((d / "pr").glob("*.csv")):
        path, auc = pr_figure(p, figs / f"pr-{p.stem}.svg")
        res.figures.append(path)
        rows.append({"scenario": scenario, "seed": int(p.stem), "metric": "pr_auc", "value": auc})
    for p in sorted((d / "confusion").glob("*.csv")):
        res.figures.append(confusion_figure(p, figs / f"confusion-{p.stem}.svg"))
    for p in sorted((d / "traces").glob("*.jsonl")):
        res.figures.append(delay_overlay_figure(p, figs / f"delays-{p.stem}.svg"))
    if sweep.exists():
        res.figures.append(tradeoff_figure(sweep, figs / "tradeoff.svg"))
    res.summary = summarize(rows)
    res.summary_path = d / "summary.csv"
    with open(res.summary_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["scenario", "metric", "n", "mean", "std"])
        w.writeheader()
        for r in res.summary:
            w.writerow({**r, "mean": f"{r['mean']:.6g}", "std": f"{r['std']:.6g}"})
    return res


def format_summary(summary: list[dict]) -> str:
    lines = [f"{'scenario':<12} {'metric':<24} {'n':>3} {'mean':>10} {'std':>10}"]
    lines += [f"{r['scenario']:<12} {r['metric']:<24} {r['n']:>3} {r['mean']:>10.4g} {r['std']:>10.4g}" for r in summary]
    return "\n".join(lines)
