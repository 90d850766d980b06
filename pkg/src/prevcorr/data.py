"""Dataset container and CSV/JSON file formats."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(self.y, dtype=int)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("features and labels have different lengths")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("non-finite features")
        if self.y.size and self.y.min() < 0:
            raise ValueError("negative label")

    def __len__(self):
        return self.y.shape[0]

    def counts(self, n_labels: int) -> np.ndarray:
        return np.bincount(self.y, minlength=n_labels)


def jsonable(obj):
    """Convert numpy types to plain Python; NaN and inf become None."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(jsonable(obj), indent=2, allow_nan=False) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.name + ".json")


def write_dataset_csv(path, ds: Dataset, n_features: int | None = None) -> None:
    d = ds.X.shape[1] if n_features is None else n_features
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([f"f{j}" for j in range(d)] + ["y"])
        for x, y in zip(ds.X, ds.y):
            wr.writerow([repr(float(v)) for v in x] + [int(y)])
    write_json(sidecar_path(path), ds.meta)


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or not header or header[-1] != "y":
            raise ValueError(f"{path}: expected header f0..f(d-1),y")
        d = len(header) - 1
        if header[:-1] != [f"f{j}" for j in range(d)]:
            raise ValueError(f"{path}: feature columns must be named f0..f{d - 1}")
        rows = [r for r in rd if r]
    X = np.array([[float(v) for v in r[:-1]] for r in rows], dtype=float).reshape(len(rows), d)
    y = np.array([int(r[-1]) for r in rows], dtype=int)
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = read_json(side)
    return Dataset(X, y, meta)
