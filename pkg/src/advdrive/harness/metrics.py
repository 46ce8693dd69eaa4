"""CSV output for training curves and evaluations."""
from __future__ import annotations

import csv
from pathlib import Path

METRICS_HEADER = (
    "env_steps", "episodes", "mean_return", "std_return", "mean_length",
    "ego_collision_rate", "adversary_collision_rate",
)
EPISODES_HEADER = ("episode", "seed", "env_steps", "return", "length", "ego_collided", "adversary_collided")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write(path, header, rows):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def write_metrics(rows, path) -> Path:
    """Training-curve or evaluation rows (:class:`MetricsRow`) with the fixed header."""
    return _write(path, METRICS_HEADER, (
        (r.env_steps, r.episodes, r.mean_return, r.std_return, r.mean_length, r.ego_collision_rate,
         r.adversary_collision_rate) for r in rows
    ))


def write_episodes(rows, path) -> Path:
    return _write(path, EPISODES_HEADER, (
        (r.episode, r.seed, r.env_steps, r.episode_return, r.length, r.ego_collided, r.adversary_collided)
        for r in rows
    ))


def read_csv(path) -> list[dict[str, float]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
