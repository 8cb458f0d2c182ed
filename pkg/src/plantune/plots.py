"""Figure rendering for adaptation outputs: score curves and per-run summaries.

Consumes the score CSV written by the CLI and renders PNG files next to it, so
a finished experiment folder carries both the machine-readable table and the
pictures.
"""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .scoring import read_score_rows

_FIG_KW = dict(figsize=(7.0, 4.0), dpi=150)


def render_report(scores_csv: str | Path, out_dir: str | Path) -> list[Path]:
    """Render the normalized-score summary and per-trial convergence curves.

    Returns the paths of the written figures.
    """
    rows = read_score_rows(scores_csv)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [
        _normalized_scores_figure(rows, out_dir / "normalized_scores.png"),
        _score_curves_figure(rows, out_dir / "score_curves.png"),
    ]
    return written


def _per_trial_quality(rows) -> dict[int, dict[int, tuple[str, float]]]:
    """run -> trial -> (kind, q_norm)."""
    table: dict[int, dict[int, tuple[str, float]]] = defaultdict(dict)
    for row in rows:
        run = int(row["run"])
        trial = int(row["trial"])
        table[run][trial] = (row["kind"], float(row["q_norm"]))
    return table


def _normalized_scores_figure(rows, path: Path) -> Path:
    table = _per_trial_quality(rows)
    runs = sorted(table)
    finals = [table[run][max(table[run])][1] for run in runs]
    trials = [len(table[run]) for run in runs]

    fig, (top, bottom) = plt.subplots(2, 1, sharex=True, **_FIG_KW)
    top.bar(runs, finals, color="#3572a5")
    top.set_ylabel("normalized cumulative score")
    top.grid(axis="y", alpha=0.3)
    best = max(range(len(runs)), key=lambda i: finals[i])
    top.bar([runs[best]], [finals[best]], color="#d4a017")
    bottom.bar(runs, trials, color="#777777")
    bottom.set_ylabel("trials used")
    bottom.set_xlabel("run")
    bottom.grid(axis="y", alpha=0.3)
    fig.suptitle("Plan quality and adaptation effort per run")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _score_curves_figure(rows, path: Path) -> Path:
    table = _per_trial_quality(rows)
    fig, ax = plt.subplots(**_FIG_KW)
    for run in sorted(table):
        trials = sorted(table[run])
        values = [table[run][t][1] for t in trials]
        ax.plot(trials, values, marker="o", markersize=3, linewidth=1, label=f"run {run}")
    ax.set_xlabel("trial")
    ax.set_ylabel("normalized score")
    ax.set_title("Score evolution across retune/replan trials")
    ax.grid(alpha=0.3)
    if len(table) <= 8:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
