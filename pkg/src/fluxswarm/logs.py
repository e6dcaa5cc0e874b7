"""CSV writers with fixed, documented headers."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

REWARD_COLUMNS = ("global_step", "env_id", "episode_id", "step_in_episode",
                  "mean_r_progress", "mean_r_energy", "mean_r_smooth", "status")
EPISODE_COLUMNS = ("env_id", "episode_id", "length", "status", "end_global_step",
                   "norm_r_progress", "norm_r_energy", "norm_r_smooth")
UPDATE_COLUMNS = ("update", "global_step", "loss_progress", "loss_energy", "loss_smooth",
                  "loss_value", "entropy", "clip_fraction", "cos_progress_energy",
                  "cos_progress_smooth", "cos_energy_smooth", "n_conflicts", "pcgrad")
TRAJECTORY_COLUMNS = ("step", "t", "agent_id", "x", "y", "vx", "vy", "ax_action", "ay_action",
                      "f_hydro_x", "f_hydro_y", "f_drag_x", "f_drag_y")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return int(v)
    return str(v)


class CSVLog:
    """Append-only CSV file; writes the header when the file is new or empty."""

    def __init__(self, path, columns, append=True):
        self.path = Path(path)
        self.columns = tuple(columns)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not append or not self.path.exists() or self.path.stat().st_size == 0
        self._fh = open(self.path, "w" if fresh else "a", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        if fresh:
            self._writer.writerow(self.columns)

    def write(self, row):
        if isinstance(row, dict):
            row = [row[c] for c in self.columns]
        if len(row) != len(self.columns):
            raise ValueError(f"{self.path.name}: expected {len(self.columns)} fields, got {len(row)}")
        self._writer.writerow([_cell(v) for v in row])

    def flush(self):
        self._fh.flush()

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_csv(path):
    """Rows as dicts of strings."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class EpisodeTracker:
    """Accumulates agent-mean rewards per environment and emits length-normalised summaries."""

    def __init__(self, n_envs):
        self.sums = np.zeros((n_envs, 3))
        self.lengths = np.zeros(n_envs, dtype=int)

    def add(self, env_id, mean_reward):
        self.sums[env_id] += mean_reward
        self.lengths[env_id] += 1

    def close(self, env_id, episode_id, status, global_step):
        n = int(self.lengths[env_id])
        norm = self.sums[env_id] / max(n, 1)
        self.sums[env_id] = 0.0
        self.lengths[env_id] = 0
        return (env_id, episode_id, n, str(status), global_step, *norm)
