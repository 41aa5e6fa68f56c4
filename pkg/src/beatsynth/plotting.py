"""Static SVG figures: PR/ROC curves, beat overlays and training-loss traces."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed element ids and no timestamp keep the SVG bytes stable between runs
matplotlib.rcParams["svg.hashsalt"] = "beatsynth"


def _save(fig, path: Path, config_hash: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Description": f"config_hash={config_hash}"})
    plt.close(fig)
    return path


def plot_curves(doc: dict, out_dir) -> list[Path]:
    """PR and ROC curves of every scenario stored in a report document."""
    out_dir = Path(out_dir)
    h = doc.get("config_hash", "")
    scenarios = doc.get("scenarios", {})
    paths = []
    for kind, xlab, ylab in (("pr", "recall", "precision"), ("roc", "false positive rate", "true positive rate")):
        fig, ax = plt.subplots(figsize=(4.5, 4))
        for name in sorted(scenarios):
            pts = scenarios[name].get(f"{kind}_points")
            if pts:
                ax.plot(pts[0], pts[1], label=name, drawstyle="default")
        if kind == "roc":
            ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
        ax.set(xlabel=xlab, ylabel=ylab, xlim=(0, 1), ylim=(0, 1.02), title=f"{kind.upper()} - {doc.get('case_id', '')}")
        ax.legend(fontsize=7, loc="lower right" if kind == "roc" else "lower left")
        paths.append(_save(fig, out_dir / f"{doc.get('case_id', 'report')}_{kind}.svg", h))
    return paths


def plot_beats(doc: dict, out_dir, max_beats: int = 8) -> Path | None:
    beats = doc.get("overlay", {})
    if not beats.get("synthetic"):
        return None
    fig, ax = plt.subplots(figsize=(5, 3))
    for b in beats["synthetic"][:max_beats]:
        ax.plot(b, color="tab:blue", alpha=0.4, lw=0.8)
    if beats.get("template"):
        ax.plot(beats["template"], color="k", lw=1.5, label="template")
        ax.legend(fontsize=7)
    ax.set(ylim=(-1.05, 1.05), xlabel="sample", title=f"beats - {doc.get('case_id', '')}")
    return _save(fig, Path(out_dir) / f"{doc.get('case_id', 'report')}_beats.svg", doc.get("config_hash", ""))


def plot_trace(csv_path, out_path, config_hash: str = "") -> Path:
    with open(csv_path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    fig, ax = plt.subplots(figsize=(5, 3))
    steps = [int(r["step"]) for r in rows]
    for col in [c for c in (rows[0].keys() if rows else []) if c in ("loss", "d_loss", "g_loss", "w_estimate")]:
        ax.plot(steps, [float(r[col]) for r in rows], label=col, lw=0.8)
    ax.set(xlabel="step", title=Path(csv_path).stem)
    ax.legend(fontsize=7)
    return _save(fig, Path(out_path), config_hash)
