"""Figure emission from metrics files: SVG line charts + merged long CSV.

One SVG per metric family, each showing the mean across the given runs
with a min-max band (shaded only when more than one run is supplied).
Per-agent families draw one line per agent.  A merged long-format CSV
(run, iteration, metric, value) accompanies the figures.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import read_metrics  # noqa: E402

import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "cohet"

_FAMILIES = ("episodic_reward", "intrinsic_reward_mean", "dynamics_loss",
             "policy_loss", "value_loss")


def _load_runs(run_dirs) -> dict[str, dict[str, np.ndarray]]:
    runs = {}
    problems = []
    for d in run_dirs:
        d = Path(d)
        csv = d / "metrics.csv"
        if not csv.exists():
            problems.append(f"{d}: missing metrics.csv")
            continue
        try:
            runs[d.name] = read_metrics(csv)
        except ValueError as exc:
            problems.append(str(exc))
    if problems:
        raise ValueError("plot input problems: " + "; ".join(problems))
    if not runs:
        raise ValueError("no run directories given")
    headers = [tuple(sorted(m.keys())) for m in runs.values()]
    if len(set(headers)) != 1:
        detail = "; ".join(f"{name}: {sorted(m.keys())}" for name, m in runs.items())
        raise ValueError(f"inconsistent metrics columns across runs: {detail}")
    return runs


def _family_columns(columns, family: str) -> list[str]:
    if family == "episodic_reward":
        return ["episodic_reward_mean"]
    return sorted(
        (c for c in columns if c.startswith(family + "_") and c[len(family) + 1:].isdigit()),
        key=lambda c: int(c.rsplit("_", 1)[1]),
    )


def plot_runs(run_dirs, out_dir) -> list[Path]:
    """Write one SVG per metric family plus merged.csv; returns written paths."""
    runs = _load_runs(run_dirs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_iters = min(m["iteration"].shape[0] for m in runs.values())
    if n_iters == 0:
        raise ValueError("metrics files contain no rows")
    iters = next(iter(runs.values()))["iteration"][:n_iters]
    written = []

    columns = sorted(next(iter(runs.values())).keys())
    for family in _FAMILIES:
        cols = _family_columns(columns, family)
        if not cols:
            continue
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for col in cols:
            stack = np.stack([m[col][:n_iters] for m in runs.values()])
            mean = np.nanmean(stack, axis=0)
            label = col if len(cols) > 1 else family
            (line,) = ax.plot(iters, mean, label=label)
            if stack.shape[0] > 1:
                ax.fill_between(iters, np.nanmin(stack, axis=0), np.nanmax(stack, axis=0),
                                alpha=0.2, color=line.get_color())
        ax.set_xlabel("iteration")
        ax.set_ylabel(family)
        ax.legend(loc="best", fontsize=8)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"{family}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)

    merged = out_dir / "merged.csv"
    with open(merged, "w", newline="\n") as fh:
        fh.write("run,iteration,metric,value\n")
        for name in sorted(runs):
            m = runs[name]
            for col in columns:
                if col == "iteration":
                    continue
                for it, v in zip(m["iteration"], m[col]):
                    fh.write(f"{name},{int(it)},{col},{v!r}\n")
    written.append(merged)
    return written
