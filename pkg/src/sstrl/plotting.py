"""Learning-curve aggregation and SVG rendering for metrics files."""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .trainer import read_metrics


def smooth(x: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average what exists."""
    x = np.asarray(x, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be >= 1")
    if window == 1:
        return x.copy()
    c = np.cumsum(np.insert(x, 0, 0.0))
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def aggregate(metric_files: Sequence[str | Path], window: int = 200
              ) -> Dict[Tuple[str, str], Dict[str, np.ndarray]]:
    """Group files by (setting, ablation); mean and std of smoothed reward across seeds."""
    groups: Dict[Tuple[str, str], List[Tuple[List[str], np.ndarray]]] = defaultdict(list)
    for f in metric_files:
        header, rows = read_metrics(f)
        if not rows:
            raise ValueError(f"{f}: no rows")
        key = (rows[0]["setting"], rows[0]["ablation"])
        groups[key].append((header["columns"], smooth([r["reward"] for r in rows], window)))
    out = {}
    for key, runs in groups.items():
        cols = runs[0][0]
        if any(c != cols for c, _ in runs):
            raise ValueError(f"mismatched columns across metrics files for {key}")
        n = min(len(r) for _, r in runs)
        curves = np.stack([r[:n] for _, r in runs])
        out[key] = {"episode": np.arange(n), "mean": curves.mean(0),
                    "std": curves.std(0) if len(runs) > 1 else np.zeros(n), "n_seeds": len(runs)}
    return out


def plot_metrics(metric_files: Sequence[str | Path], out_dir: str | Path, window: int = 200) -> List[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    agg = aggregate(metric_files, window)
    written = []
    by_setting: Dict[str, list] = defaultdict(list)
    for (setting, ablation), d in sorted(agg.items()):
        by_setting[setting].append((ablation, d))
    for setting, items in by_setting.items():
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for ablation, d in items:
            line, = ax.plot(d["episode"], d["mean"], label=f"{ablation} (n={d['n_seeds']})")
            if d["n_seeds"] > 1:
                ax.fill_between(d["episode"], d["mean"] - d["std"], d["mean"] + d["std"],
                                color=line.get_color(), alpha=0.25, linewidth=0)
        ax.set_xlabel("episode")
        ax.set_ylabel("test reward")
        ax.set_ylim(-0.05, 1.05)
        ax.set_title(f"{setting} setting")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out / f"reward_{setting}.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)
    table = out / "aggregated.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["setting", "ablation", "episode", "mean_reward", "std_reward", "n_seeds"])
        for (setting, ablation), d in sorted(agg.items()):
            for e, m, s in zip(d["episode"], d["mean"], d["std"]):
                w.writerow([setting, ablation, int(e), f"{m:.6f}", f"{s:.6f}", d["n_seeds"]])
    written.append(table)
    return written
