"""Labelled samples, in-memory datasets and the line-delimited dataset file format.

A dataset file is UTF-8 text. The first line is a JSON header::

    {"header": true, "task": "identification", "name": "IDS_5", "n_obj": [5, 5],
     "theta_max": 6.283..., "eps": 0.01, "seed": 0, "generator": "...", "count": 10000}

Every following line is one sample, ``{"label": 1, "objects": [[10 floats], ...]}``
for Identification or ``{"label": 0, "objects1": [...], "objects2": [...]}`` for
Comparison. Floats are written with 17 significant digits so reading a file back
reproduces every value bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import N_FEATURES, Configuration

TASKS = ("identification", "comparison")
SUFFIX = ".jsonl"


class DatasetFormatError(ValueError):
    pass


@dataclass
class IdentSample:
    label: int
    config: Configuration


@dataclass
class CompSample:
    label: int
    config1: Configuration
    config2: Configuration


@dataclass
class Dataset:
    task: str
    labels: np.ndarray
    configs1: list[np.ndarray]
    configs2: list[np.ndarray] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if (self.configs2 is None) != (self.task == "identification"):
            raise ValueError("comparison datasets need two configurations per sample")
        if len(self.configs1) != len(self.labels) or (
                self.configs2 is not None and len(self.configs2) != len(self.labels)):
            raise ValueError("labels and configurations differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int):
        if self.task == "identification":
            return IdentSample(int(self.labels[i]), Configuration(self.configs1[i]))
        return CompSample(int(self.labels[i]), Configuration(self.configs1[i]),
                          Configuration(self.configs2[i]))

    @property
    def name(self) -> str:
        return self.meta.get("name", "")

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        c2 = [self.configs2[i] for i in idx] if self.configs2 is not None else None
        return Dataset(self.task, self.labels[idx], [self.configs1[i] for i in idx],
                       c2, dict(self.meta))

    def n_obj_range(self) -> tuple[int, int]:
        sizes = [len(c) for c in self.configs1]
        if self.configs2 is not None:
            sizes += [len(c) for c in self.configs2]
        return min(sizes), max(sizes)

    @classmethod
    def from_samples(cls, samples, meta: dict | None = None) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise ValueError("no samples")
        labels = [s.label for s in samples]
        if isinstance(samples[0], IdentSample):
            return cls("identification", labels, [s.config.features for s in samples],
                       None, dict(meta or {}))
        return cls("comparison", labels, [s.config1.features for s in samples],
                   [s.config2.features for s in samples], dict(meta or {}))


# -- codec --------------------------------------------------------------------

def _fmt_config(features: np.ndarray) -> str:
    rows = (",".join(format(v, ".17g") for v in row) for row in features.tolist())
    return "[" + ",".join("[" + r + "]" for r in rows) + "]"


def encode_record(ds: Dataset, i: int) -> str:
    label = int(ds.labels[i])
    if ds.task == "identification":
        return f'{{"label":{label},"objects":{_fmt_config(ds.configs1[i])}}}'
    return (f'{{"label":{label},"objects1":{_fmt_config(ds.configs1[i])},'
            f'"objects2":{_fmt_config(ds.configs2[i])}}}')


def header_record(ds: Dataset) -> dict:
    head = {"header": True, "task": ds.task}
    head.update({k: v for k, v in ds.meta.items() if k not in ("header", "task", "count")})
    head["count"] = len(ds)
    return head


def write_dataset(path, ds: Dataset) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header_record(ds), sort_keys=True, allow_nan=False) + "\n")
        for i in range(len(ds)):
            fh.write(encode_record(ds, i) + "\n")
    return path


def _parse_objects(value, lineno: int, key: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(f"line {lineno}: {key!r} is not a numeric array") from exc
    if arr.ndim != 2 or arr.shape[1] != N_FEATURES or arr.shape[0] == 0:
        raise DatasetFormatError(
            f"line {lineno}: {key!r} must be a non-empty list of {N_FEATURES}-float vectors")
    return arr


def read_dataset(path) -> Dataset:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"line 1: malformed header: {exc.msg}") from exc
    if not isinstance(head, dict) or head.get("header") is not True:
        raise DatasetFormatError("line 1: missing dataset header")
    task = head.get("task")
    if task not in TASKS:
        raise DatasetFormatError(f"line 1: unknown task {task!r}")

    labels, first, second = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {lineno}: malformed record: {exc.msg}") from exc
        if not isinstance(rec, dict) or rec.get("label") not in (0, 1):
            raise DatasetFormatError(f"line {lineno}: label must be 0 or 1")
        if task == "identification":
            if "objects" not in rec or "objects1" in rec:
                raise DatasetFormatError(
                    f"line {lineno}: record does not match header task {task!r}")
            first.append(_parse_objects(rec["objects"], lineno, "objects"))
        else:
            if "objects1" not in rec or "objects2" not in rec:
                raise DatasetFormatError(
                    f"line {lineno}: record does not match header task {task!r}")
            first.append(_parse_objects(rec["objects1"], lineno, "objects1"))
            second.append(_parse_objects(rec["objects2"], lineno, "objects2"))
        labels.append(rec["label"])

    if "count" in head and head["count"] != len(labels):
        raise DatasetFormatError(
            f"header declares {head['count']} records, file has {len(labels)}")
    meta = {k: v for k, v in head.items() if k not in ("header", "task", "count")}
    return Dataset(task, np.array(labels, dtype=np.int64), first,
                   second if task == "comparison" else None, meta)


def dataset_path(directory, name: str) -> Path:
    return Path(directory) / f"{name}{SUFFIX}"
