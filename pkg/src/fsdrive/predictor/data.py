"""Columnar trajectory dataset and windowing.

File format: CSV with columns (episode_id, entity_id, class, t, x, y),
one row per agent per tick, grouped into sliding windows for training.
Splits are by episode so no trajectory leaks across train/val/test.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["WindowSet", "write_dataset", "read_dataset", "build_windows", "split_windows"]

COLUMNS = ("episode_id", "entity_id", "class", "t", "x", "y")


@dataclass
class WindowSet:
    """History/target window pairs with their source episode ids."""

    X: np.ndarray  # (M, t_in, 2)
    Y: np.ndarray  # (M, n_out, 2)
    episodes: np.ndarray  # (M,) episode id per window

    def __len__(self) -> int:
        return len(self.X)

    def subset(self, mask: np.ndarray) -> "WindowSet":
        return WindowSet(self.X[mask], self.Y[mask], self.episodes[mask])


def write_dataset(rows, path) -> None:
    """Write (episode_id, entity_id, class, t, x, y) rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow(row)


def read_dataset(path) -> dict[tuple[str, str], np.ndarray]:
    """Group the file into {(episode_id, entity_id): (L, 2) trajectory}."""
    tracks: dict[tuple[str, str], list[tuple[float, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"dataset missing columns: {sorted(missing)}")
        for row in reader:
            key = (row["episode_id"], row["entity_id"])
            tracks.setdefault(key, []).append(
                (float(row["t"]), float(row["x"]), float(row["y"]))
            )
    out = {}
    for key, samples in tracks.items():
        samples.sort(key=lambda r: r[0])
        out[key] = np.array([[x, y] for _, x, y in samples])
    return out


def build_windows(
    tracks: dict[tuple[str, str], np.ndarray], t_in: int, n_out: int, stride: int = 5
) -> WindowSet:
    xs, ys, eps = [], [], []
    span = t_in + n_out
    for (episode, _), traj in sorted(tracks.items()):
        if len(traj) < span:
            continue
        for start in range(0, len(traj) - span + 1, stride):
            xs.append(traj[start : start + t_in])
            ys.append(traj[start + t_in : start + span])
            eps.append(episode)
    if not xs:
        raise ValueError("no windows could be built; trajectories too short")
    return WindowSet(np.stack(xs), np.stack(ys), np.array(eps))


def split_windows(
    windows: WindowSet, seed: int = 0, fractions: tuple[float, float] = (0.8, 0.1)
) -> tuple[WindowSet, WindowSet, WindowSet]:
    """Deterministic 80/10/10 split by episode."""
    episodes = np.unique(windows.episodes)
    rng = np.random.default_rng(seed)
    rng.shuffle(episodes)
    n_train = max(1, int(round(fractions[0] * len(episodes))))
    n_val = max(1, int(round(fractions[1] * len(episodes))))
    train_eps = set(episodes[:n_train])
    val_eps = set(episodes[n_train : n_train + n_val])
    in_train = np.array([e in train_eps for e in windows.episodes])
    in_val = np.array([e in val_eps for e in windows.episodes])
    in_test = ~(in_train | in_val)
    if not in_test.any():  # tiny datasets: fall back to reusing validation
        in_test = in_val
    return windows.subset(in_train), windows.subset(in_val), windows.subset(in_test)
