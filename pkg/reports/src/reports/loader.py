"""Read-only access to the trainer's on-disk artifacts."""

import csv
import json
import os
from typing import Optional

import numpy as np

STEP_COLUMNS = ("epoch", "t", "reward", "violated", "feasible", "mode",
                "solve_ms", "objective")
EPOCH_COLUMNS = ("epoch", "episode_return", "cum_violations",
                 "infeasible_rate", "safe_set_area", "capture_fraction")
BENCH_COLUMNS = ("sweep", "value", "median_ms", "mean_ms", "trials")

_BOOL = {"True": True, "False": False}


class SchemaError(ValueError):
    """An artifact is missing or its layout does not match the writer's."""


def _read_rows(path: str, expected) -> list:
    if not os.path.isfile(path):
        raise SchemaError(f"{path} is missing; expected a run directory "
                          "produced by the training CLI")
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != tuple(expected):
            raise SchemaError(f"{path} has columns {header}, "
                              f"expected {tuple(expected)}")
        return list(reader)


def _bool_column(path: str, name: str, raw: list) -> np.ndarray:
    bad = [v for v in raw if v not in _BOOL]
    if bad:
        raise SchemaError(f"{path}: column {name} holds {bad[0]!r}, "
                          "expected 'True' or 'False'")
    return np.array([_BOOL[v] for v in raw], dtype=bool)


def _load_steps(path: str) -> dict:
    rows = _read_rows(path, STEP_COLUMNS)
    cols = list(zip(*rows)) if rows else [[] for _ in STEP_COLUMNS]
    return {
        "epoch": np.array(cols[0], dtype=int),
        "t": np.array(cols[1], dtype=int),
        "reward": np.array(cols[2], dtype=float),
        "violated": _bool_column(path, "violated", list(cols[3])),
        "feasible": _bool_column(path, "feasible", list(cols[4])),
        "mode": list(cols[5]),
        "solve_ms": np.array(cols[6], dtype=float),
        "objective": np.array(cols[7], dtype=float),
    }


def _load_epochs(path: str) -> dict:
    rows = _read_rows(path, EPOCH_COLUMNS)
    cols = list(zip(*rows)) if rows else [[] for _ in EPOCH_COLUMNS]
    out = {"epoch": np.array(cols[0], dtype=int)}
    for i, name in enumerate(EPOCH_COLUMNS[1:], start=1):
        out[name] = np.array(cols[i], dtype=float)
    return out


def _load_json(path: str):
    with open(path, "r") as fh:
        return json.load(fh)


class RunArtifacts:
    """One run directory, loaded and schema-checked.

    `safe_sets` is None when the run kept no safe-set history (the
    certifier was disabled or the file is absent).
    """

    def __init__(self, path: str, config: dict, summary: Optional[dict],
                 steps: dict, epochs: dict, safe_sets: Optional[list]):
        self.path = path
        self.config = config
        self.summary = summary
        self.steps = steps
        self.epochs = epochs
        self.safe_sets = safe_sets

    @property
    def name(self) -> str:
        return os.path.basename(os.path.normpath(self.path))


def load_run(path: str) -> RunArtifacts:
    if not os.path.isdir(path):
        raise SchemaError(f"{path} is not a directory")
    steps = _load_steps(os.path.join(path, "steps.csv"))
    epochs = _load_epochs(os.path.join(path, "epochs.csv"))

    config_path = os.path.join(path, "config.json")
    config = _load_json(config_path) if os.path.isfile(config_path) else {}
    summary_path = os.path.join(path, "summary.json")
    summary = _load_json(summary_path) if os.path.isfile(summary_path) else None

    sets_path = os.path.join(path, "safe_sets.json")
    safe_sets = None
    if os.path.isfile(sets_path):
        history = _load_json(sets_path)
        if not isinstance(history, list):
            raise SchemaError(f"{sets_path} should hold a list of per-epoch "
                              "safe-set records")
        for rec in history:
            missing = {"epoch", "vertices"} - set(rec)
            if missing:
                raise SchemaError(f"{sets_path}: record lacks {sorted(missing)}")
        safe_sets = history or None
    return RunArtifacts(path, config, summary, steps, epochs, safe_sets)


def load_bench(path: str) -> dict:
    """Benchmark CSV as {sweep_name: (values, median_ms, mean_ms)}."""
    rows = _read_rows(path, BENCH_COLUMNS)
    out: dict = {}
    for sweep, value, median_ms, mean_ms, _trials in rows:
        out.setdefault(sweep, []).append(
            (float(value), float(median_ms), float(mean_ms)))
    for sweep, triples in out.items():
        triples.sort()
        arr = np.array(triples, dtype=float)
        out[sweep] = (arr[:, 0], arr[:, 1], arr[:, 2])
    return out
