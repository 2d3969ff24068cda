"""Decision heatmaps and the multi-run studies built on training and evaluation.

Every study here is a thin loop over :func:`fit`, which trains one model on
either a plain split dict or a curriculum (a list of five training stages).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import datagen as dg
from .dataset import CompSample, Dataset, IdentSample
from .geometry import WORLD_SIDE
from .models import Model, config_for_dataset
from .trainer import (
    Cell, Checkpoint, RunReport, TrainSpec, evaluate, train, train_curriculum,
)

Log = Callable[[str], None] | None


# -- heatmaps -----------------------------------------------------------------

@dataclass
class Heatmap:
    """``grid[p, q]`` holds ``C_plus - C_minus`` with the object at cell (row p = y, column q = x)."""

    grid: np.ndarray
    extent: tuple[float, float, float, float]
    object_index: int
    star: tuple[float, float]
    star_cell: tuple[int, int]

    @property
    def resolution(self) -> int:
        return self.grid.shape[0]

    def cell_center(self, p: int, q: int) -> tuple[float, float]:
        x0, x1, y0, y1 = self.extent
        r = self.resolution
        return x0 + (q + 0.5) * (x1 - x0) / r, y0 + (p + 0.5) * (y1 - y0) / r

    def cell_position(self, p: int, q: int) -> tuple[float, float]:
        """Where the object sat when cell (p, q) was evaluated."""
        return self.star if (p, q) == self.star_cell else self.cell_center(p, q)

    @property
    def star_value(self) -> float:
        return float(self.grid[self.star_cell])


def heatmap_extent(positions: np.ndarray) -> tuple[float, float, float, float]:
    """The world square, grown where needed so every object lies inside it."""
    lo = np.minimum(positions.min(axis=0), 0.0)
    hi = np.maximum(positions.max(axis=0), WORLD_SIDE)
    return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])


def _cell_of(extent, r: int, x: float, y: float) -> tuple[int, int]:
    x0, x1, y0, y1 = extent
    q = min(max(int(math.floor((x - x0) / (x1 - x0) * r)), 0), r - 1)
    p = min(max(int(math.floor((y - y0) / (y1 - y0) * r)), 0), r - 1)
    return p, q


def _as_model(m) -> Model:
    return m.to_model() if isinstance(m, Checkpoint) else m


def logit_gap(model, config1: np.ndarray, config2: np.ndarray | None = None) -> float:
    """``C_plus - C_minus`` for a single input."""
    model = _as_model(model)
    logits = model.logits([config1], None if config2 is None else [config2])[0]
    return float(logits[0] - logits[1])


def heatmap(model, sample, object_index: int, resolution: int = 100,
            batch_size: int = 2000) -> Heatmap:
    """Sweep one object over a ``resolution`` x ``resolution`` lattice and record H.

    Identification models move the object in the single input. Comparison
    models see the configuration paired with a copy of itself in which only
    the copy's object moves. The star's cell is evaluated with the object at
    its original position, so it holds H for the unmodified input.
    """
    model = _as_model(model)
    if isinstance(sample, IdentSample):
        if model.task != "identification":
            raise ValueError("identification sample given to a comparison model")
        base = sample.config.features
    elif isinstance(sample, CompSample):
        if model.task != "comparison":
            raise ValueError("comparison sample given to an identification model")
        base = sample.config1.features
    else:
        raise TypeError(f"expected a sample, got {type(sample).__name__}")
    n = base.shape[0]
    if not 0 <= object_index < n:
        raise IndexError(f"object index {object_index} out of range for {n} objects")
    if resolution < 1:
        raise ValueError("resolution must be at least 1")

    base = base.copy()
    star = (float(base[object_index, 0]), float(base[object_index, 1]))
    extent = heatmap_extent(base[:, :2])
    x0, x1, y0, y1 = extent
    r = resolution
    xs = x0 + (np.arange(r) + 0.5) * (x1 - x0) / r
    ys = y0 + (np.arange(r) + 0.5) * (y1 - y0) / r
    gx, gy = np.meshgrid(xs, ys)
    points = np.stack([gx.ravel(), gy.ravel()], axis=1)

    comparison = model.task == "comparison"
    values = np.empty(r * r)
    for lo in range(0, r * r, batch_size):
        pts = points[lo:lo + batch_size]
        moved = np.repeat(base[None], len(pts), axis=0)
        moved[:, object_index, :2] = pts
        if comparison:
            logits = model.logits([base] * len(pts), list(moved))
        else:
            logits = model.logits(list(moved))
        values[lo:lo + len(pts)] = logits[:, 0] - logits[:, 1]
    grid = values.reshape(r, r)

    star_cell = _cell_of(extent, r, *star)
    grid[star_cell] = logit_gap(model, base, base if comparison else None)
    return Heatmap(grid, extent, object_index, star, star_cell)


def write_grid(path, hm: Heatmap) -> Path:
    """R lines of R values; line p is row p (increasing y), values run along x."""
    path = Path(path)
    lines = [" ".join(format(v, ".17g") for v in row) for row in hm.grid]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_grid(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=2)


def diverging_rgb(grid: np.ndarray) -> np.ndarray:
    """Blue for negative, white at zero, red for positive, scaled by the largest |H|."""
    scale = float(np.max(np.abs(grid))) or 1.0
    t = np.clip(grid / scale, -1.0, 1.0)[..., None]
    white = np.ones(3)
    red, blue = np.array([0.8, 0.1, 0.1]), np.array([0.1, 0.2, 0.8])
    rgb = np.where(t >= 0, white + t * (red - white), white - t * (blue - white))
    return np.round(rgb * 255).astype(np.uint8)


def write_ppm(path, hm: Heatmap) -> Path:
    """Binary PPM image, top row at the largest y like a plot."""
    path = Path(path)
    rgb = diverging_rgb(hm.grid)[::-1]
    h, w = rgb.shape[:2]
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes())
    return path


# -- single runs --------------------------------------------------------------

def is_curriculum(datasets: Mapping) -> bool:
    return isinstance(datasets["train"], (list, tuple))


def fit(kind: str, datasets: Mapping, seed: int, spec: TrainSpec,
        log: Log = None, **model_overrides) -> tuple[Checkpoint, RunReport]:
    """Train one freshly initialised model.

    A list under ``"train"`` is treated as the five curriculum stages.
    """
    spec = replace(spec, seed=seed)
    model = Model(config_for_dataset(kind, first_train(datasets), **model_overrides), seed)
    if is_curriculum(datasets):
        return train_curriculum(model, datasets["train"], datasets.get("valid"), spec,
                                datasets.get("test"), log)
    return train(model, dict(datasets), spec, log)


def first_train(datasets: Mapping) -> Dataset:
    stages = datasets["train"]
    return stages[0] if is_curriculum(datasets) else stages


def _fmt_cells(cells: Mapping, rows: Sequence[str], cols: Sequence[str],
               corner: str = "model", sep: str = "\t") -> str:
    out = [sep.join([corner, *cols])]
    for r in rows:
        out.append(sep.join([r] + [str(cells[(r, c)]) if (r, c) in cells else "-" for c in cols]))
    return "\n".join(out) + "\n"


# -- studies ------------------------------------------------------------------

def generalization_matrix(checkpoints: Mapping[str, Sequence], tests: Mapping[str, Dataset]
                          ) -> dict[tuple[str, str], Cell]:
    """Accuracy of every checkpoint group (keyed by train range) on every test set.

    Keys are ``(train_label, test_label)``; each cell aggregates over the
    group's checkpoints (one per seed).
    """
    cells: dict[tuple[str, str], Cell] = {}
    for train_label, ckpts in checkpoints.items():
        models = [_as_model(c) for c in ckpts]
        for m in models:
            if m.task != "comparison":
                raise ValueError("generalization across object counts needs comparison models")
        for test_label, ds in tests.items():
            cells[(train_label, test_label)] = Cell([evaluate(m, ds) for m in models])
    return cells


def format_generalization(cells: Mapping[tuple[str, str], Cell], labels: Sequence[str]) -> str:
    """Rows are test ranges and columns train ranges, as in the published layout."""
    flipped = {(test, train): c for (train, test), c in cells.items()}
    return _fmt_cells(flipped, labels, labels, corner="test\\train")


@dataclass
class SweepResult:
    sizes: list[int]
    cells: dict[int, Cell]
    steps: dict[int, list[int]] = field(default_factory=dict)


def truncate(datasets: Mapping, size: int) -> dict:
    """Keep the first ``size`` training samples of every stage."""
    out = dict(datasets)
    if is_curriculum(datasets):
        out["train"] = [s.subset(range(size)) for s in datasets["train"]]
    else:
        out["train"] = datasets["train"].subset(range(size))
    return out


def sample_efficiency_sweep(kind: str, datasets: Mapping, sizes: Sequence[int],
                            seeds: Sequence[int], spec: TrainSpec,
                            log: Log = None) -> SweepResult:
    """Train on the first ``size`` samples while holding the optimizer step count fixed.

    The per-epoch step budget is ``spec.steps_per_epoch`` if set, otherwise the
    one the full training set would need; smaller sets are cycled to fill it.
    """
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ValueError(f"sizes must be sorted ascending, got {sizes}")
    full = len(first_train(datasets))
    if sizes and sizes[-1] > full:
        raise ValueError(f"size {sizes[-1]} exceeds the {full} available training samples")
    steps = spec.steps_per_epoch or math.ceil(full / spec.batch_size)
    step_spec = replace(spec, steps_per_epoch=steps)
    result = SweepResult(sizes, {})
    for size in sizes:
        acc, steps = [], []
        for seed in seeds:
            _, report = fit(kind, truncate(datasets, size), seed, step_spec)
            acc.append(report.test_accuracy)
            steps.append(report.total_steps)
            if log:
                log(f"sweep {kind} size={size} seed={seed}: {report.test_accuracy:.4f}")
        result.cells[size] = Cell(acc)
        result.steps[size] = steps
    return result


def format_sweep(results: Mapping[str, SweepResult]) -> str:
    kinds = list(results)
    sizes = sorted({s for r in results.values() for s in r.sizes})
    cells = {(str(s), k): results[k].cells[s] for k in kinds for s in results[k].sizes}
    return _fmt_cells(cells, [str(s) for s in sizes], kinds, corner="samples")


def with_distractors(datasets: Mapping, nd_max: int, seed: int) -> dict:
    """Distractor copies of every split; each split gets its own stream."""
    out = {}
    for k, (key, value) in enumerate(sorted(datasets.items())):
        if key == "ref":
            out[key] = value
        elif isinstance(value, (list, tuple)):
            out[key] = [dg.distractor_dataset(s, nd_max, seed + 1000 * (k + 1) + j)
                        for j, s in enumerate(value)]
        else:
            out[key] = dg.distractor_dataset(value, nd_max, seed + 1000 * (k + 1))
    return out


def distractor_eval(kinds: Sequence[str], tasks: Mapping[str, Sequence[Mapping]],
                    seeds: Sequence[int], spec: TrainSpec | Mapping[str, TrainSpec],
                    log: Log = None) -> dict[tuple[str, str], Cell]:
    """Train and test each kind on distractor datasets, grouped by task label.

    ``tasks`` maps a column label (e.g. "Identification") to split dicts that
    already contain distractors. ``spec`` may be one spec or one per label.
    """
    if isinstance(spec, TrainSpec):
        return train_matrix(kinds, tasks, seeds, spec, log)
    cells: dict[tuple[str, str], Cell] = {}
    for label, entries in tasks.items():
        cells.update(train_matrix(kinds, {label: entries}, seeds, spec[label], log))
    return cells


def preset_study(presets: Sequence[str], kinds: Sequence[str], n_obj: int,
                 seeds: Sequence[int], gen: dg.GenConfig, spec: TrainSpec,
                 log: Log = None) -> dict[tuple[str, str], Cell]:
    """Identification accuracy for every (kind, preset) pair, mean over seeds."""
    groups = {p: [dg.gen_preset(p, n_obj, gen)] for p in presets}
    return train_matrix(kinds, groups, seeds, spec, log)


def train_matrix(kinds, groups: Mapping[str, Sequence[Mapping]], seeds, spec, log
            ) -> dict[tuple[str, str], Cell]:
    cells: dict[tuple[str, str], Cell] = {}
    for kind in kinds:
        for label, entries in groups.items():
            acc = []
            for datasets in entries:
                for seed in seeds:
                    _, report = fit(kind, datasets, seed, spec)
                    acc.append(report.test_accuracy)
                    if log:
                        log(f"{kind} {label} {first_train(datasets).name} seed={seed}: "
                            f"{report.test_accuracy:.4f}")
            cells[(kind, label)] = Cell(acc)
    return cells
