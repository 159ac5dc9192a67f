"""Metrics CSV: fixed schema, byte-stable header, repr-exact float cells.

Columns: iteration, env_steps, episodic_reward_mean/min/max, then per agent
intrinsic_reward_mean_i, dynamics_loss_i, policy_loss_i, value_loss_i.
Rows are flushed as they are written so partial runs keep their metrics.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

_BASE_COLUMNS = (
    "iteration",
    "env_steps",
    "episodic_reward_mean",
    "episodic_reward_min",
    "episodic_reward_max",
)
_PER_AGENT = ("intrinsic_reward_mean", "dynamics_loss", "policy_loss", "value_loss")


def metrics_columns(n_agents: int) -> list[str]:
    cols = list(_BASE_COLUMNS)
    for i in range(n_agents):
        cols.extend(f"{name}_{i}" for name in _PER_AGENT)
    return cols


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class MetricsWriter:
    def __init__(self, path, n_agents: int):
        self.path = Path(path)
        self.columns = metrics_columns(n_agents)
        self._fh = open(self.path, "w", newline="\n")
        self._fh.write(",".join(self.columns) + "\n")
        self._fh.flush()

    def write_row(self, row: dict) -> None:
        missing = [c for c in self.columns if c not in row]
        if missing:
            raise ValueError(f"metrics row missing columns: {missing}")
        self._fh.write(",".join(_fmt(row[c]) for c in self.columns) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> dict[str, np.ndarray]:
    """Load a metrics.csv into column arrays (floats; iteration/env_steps ints)."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty metrics file")
    header = lines[0].split(",")
    data: dict[str, list] = {c: [] for c in header}
    for ln in lines[1:]:
        if not ln:
            continue
        cells = ln.split(",")
        if len(cells) != len(header):
            raise ValueError(f"{path}: row width {len(cells)} != header width {len(header)}")
        for c, cell in zip(header, cells):
            data[c].append(float(cell))
    out = {}
    for c, vals in data.items():
        arr = np.array(vals)
        if c in ("iteration", "env_steps"):
            arr = arr.astype(np.int64)
        out[c] = arr
    return out
