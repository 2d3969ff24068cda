"""Training loops, evaluation, checkpoints and multi-seed experiment tables."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import gradengine as ge
from .dataset import Dataset
from .models import Model, ModelConfig, predict_labels, target_index

SELECTIONS = ("best-valid", "last")
CURRICULUM_STAGES = 5


@dataclass
class TrainSpec:
    epochs: int = 20
    # Epochs spent on each curriculum stage.
    stage_epochs: int = 5
    lr: float = 1e-3
    batch_size: int = 128
    seed: int = 0
    selection: str = "best-valid"
    # Fixed optimizer-step budget per epoch; the training set is cycled to fill it.
    steps_per_epoch: int | None = None
    # Hard cap on total optimizer steps (0 returns the initial parameters).
    max_steps: int | None = None
    eval_batch_size: int = 1000

    def __post_init__(self):
        if min(self.epochs, self.stage_epochs, self.batch_size) < 1:
            raise ValueError("epochs, stage_epochs and batch_size must be at least 1")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}")


@dataclass
class EpochRecord:
    epoch: int
    stage: int | None
    theta_max: float | None
    steps: int
    train_loss: float
    train_accuracy: float
    valid_accuracy: float | None


@dataclass
class RunReport:
    model_kind: str
    task: str
    seed: int
    train_data: list[str]
    epochs: list[EpochRecord] = field(default_factory=list)
    selected_epoch: int | None = None
    test_accuracy: float | None = None
    wall_time: float = 0.0
    total_steps: int = 0
    model_hash: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def summary(self) -> str:
        lines = [f"{self.model_kind} ({self.task}) seed={self.seed} data={','.join(self.train_data)}"]
        for r in self.epochs:
            va = "-" if r.valid_accuracy is None else f"{r.valid_accuracy:.4f}"
            stage = "" if r.stage is None else f" stage={r.stage}"
            lines.append(f"  epoch {r.epoch:3d}{stage} loss={r.train_loss:.4f} "
                         f"train_acc={r.train_accuracy:.4f} valid_acc={va}")
        if self.test_accuracy is not None:
            lines.append(f"  test accuracy {self.test_accuracy:.4f} (epoch {self.selected_epoch})")
        lines.append(f"  {self.total_steps} steps in {self.wall_time:.1f}s, hash {self.model_hash[:12]}")
        return "\n".join(lines)


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: Model, extra: dict | None = None) -> "Checkpoint":
        return cls(model.config, model.state_dict(), model.seed, dict(extra or {}))

    def to_model(self) -> Model:
        model = Model(self.config, self.seed)
        model.load_state_dict(self.params)
        return model

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        ge.write_checkpoint(path, self.params, self.config.to_dict(), self.seed, self.extra)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        obj = ge.read_checkpoint(path)
        return cls(ModelConfig.from_dict(obj["hyperparameters"]), dict(obj["params"]),
                   obj["seed"], obj.get("extra", {}))

    def hash(self) -> str:
        return params_hash(self.params)


def params_hash(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name, value in params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(value, dtype=np.float64).tobytes())
    return h.hexdigest()


# -- evaluation ---------------------------------------------------------------

def _as_model(m) -> Model:
    return m.to_model() if isinstance(m, Checkpoint) else m


def predict_logits(model, dataset: Dataset, batch_size: int = 1000) -> np.ndarray:
    model = _as_model(model)
    _check_task(model, dataset)
    out = []
    with ge.no_grad():
        for lo in range(0, len(dataset), batch_size):
            hi = min(lo + batch_size, len(dataset))
            c2 = dataset.configs2[lo:hi] if dataset.configs2 is not None else None
            out.append(model.logits(dataset.configs1[lo:hi], c2))
    return np.concatenate(out) if out else np.zeros((0, 2))


def evaluate(model, dataset: Dataset, batch_size: int = 1000) -> float:
    """Fraction of samples whose predicted label matches; ties count as positive."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    pred = predict_labels(predict_logits(model, dataset, batch_size))
    return float(np.mean(pred == dataset.labels))


def _check_task(model: Model, dataset: Dataset) -> None:
    if model.task != dataset.task:
        raise ValueError(f"model is for {model.task} but dataset {dataset.name!r} is {dataset.task}")


# -- training -----------------------------------------------------------------

class _Trainer:
    """Shared state of one run: model, shuffling stream, step counter, report."""

    def __init__(self, model: Model, spec: TrainSpec, train_names: list[str],
                 valid: Dataset | None):
        self.model = model
        self.spec = spec
        self.valid = valid
        self.rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(spec.seed, spawn_key=(11,))))
        self.steps = 0
        self.report = RunReport(model.config.layer_kind, model.task, spec.seed, train_names)
        self.best: tuple[float, int, dict] | None = None
        self.t0 = time.perf_counter()
        self._valid_inputs = None
        self._cycle: list[int] = []

    def _budget_left(self) -> bool:
        return self.spec.max_steps is None or self.steps < self.spec.max_steps

    def _epoch_batches(self, n: int):
        bs = self.spec.batch_size
        if self.spec.steps_per_epoch is None:
            perm = self.rng.permutation(n)
            for lo in range(0, n, bs):
                yield perm[lo:lo + bs]
            return
        for _ in range(self.spec.steps_per_epoch):
            while len(self._cycle) < bs:
                self._cycle.extend(self.rng.permutation(n).tolist())
            batch, self._cycle = self._cycle[:bs], self._cycle[bs:]
            yield np.array(batch)

    def run_epoch(self, data: Dataset, stage: int | None = None) -> None:
        model, store = self.model, self.model.store
        loss_sum, correct, seen = 0.0, 0, 0
        for idx in self._epoch_batches(len(data)):
            if not self._budget_left():
                break
            c1 = [data.configs1[i] for i in idx]
            c2 = [data.configs2[i] for i in idx] if data.configs2 is not None else None
            labels = data.labels[idx]
            logits = model.forward(model.prepare(c1, c2))
            loss = ge.softmax_cross_entropy(logits, target_index(labels))
            ge.backward(loss)
            ge.adam_step(store, self.spec.lr)
            self.steps += 1
            loss_sum += float(loss.data) * len(idx)
            correct += int(np.sum(predict_labels(logits.data) == labels))
            seen += len(idx)
        epoch = len(self.report.epochs) + 1
        valid_acc = self._validate()
        self.report.epochs.append(EpochRecord(
            epoch=epoch, stage=stage,
            theta_max=data.meta.get("theta_max") if stage is not None else None,
            steps=self.steps,
            train_loss=loss_sum / seen if seen else float("nan"),
            train_accuracy=correct / seen if seen else float("nan"),
            valid_accuracy=valid_acc,
        ))
        if self.spec.selection == "best-valid" and valid_acc is not None:
            if self.best is None or valid_acc > self.best[0]:
                self.best = (valid_acc, epoch, self.model.state_dict())

    def _validate(self) -> float | None:
        if self.valid is None:
            return None
        return evaluate(self.model, self.valid, self.spec.eval_batch_size)

    def finish(self, test: Dataset | None) -> tuple[Checkpoint, RunReport]:
        report = self.report
        if self.best is not None and self.steps > 0:
            _, report.selected_epoch, state = self.best
            self.model.load_state_dict(state)
        else:
            report.selected_epoch = len(report.epochs) if self.steps > 0 else 0
        ckpt = Checkpoint.from_model(self.model, {"train_data": report.train_data})
        if test is not None:
            report.test_accuracy = evaluate(self.model, test, self.spec.eval_batch_size)
        report.total_steps = self.steps
        report.model_hash = ckpt.hash()
        report.wall_time = time.perf_counter() - self.t0
        return ckpt, report


def train(model: Model, datasets: dict, spec: TrainSpec,
          log: Callable[[str], None] | None = None) -> tuple[Checkpoint, RunReport]:
    """Mini-batch cross-entropy training with Adam.

    ``datasets`` maps ``"train"`` (required), ``"valid"`` and ``"test"`` to
    :class:`Dataset` objects. The returned checkpoint follows ``spec.selection``.
    """
    train_ds = datasets["train"]
    valid, test = datasets.get("valid"), datasets.get("test")
    for ds in (train_ds, valid, test):
        if ds is not None:
            _check_task(model, ds)
    t = _Trainer(model, spec, [train_ds.name], valid)
    for _ in range(spec.epochs):
        t.run_epoch(train_ds)
        if log:
            log(_epoch_line(t.report.epochs[-1]))
    return t.finish(test)


def train_curriculum(model: Model, stages: Sequence[Dataset], valid: Dataset | None,
                     spec: TrainSpec, test: Dataset | None = None,
                     log: Callable[[str], None] | None = None) -> tuple[Checkpoint, RunReport]:
    """Train on each curriculum stage in turn for ``spec.stage_epochs`` epochs.

    Stages must be given in order of increasing maximum rotation angle;
    parameters and optimizer state carry over between stages.
    """
    if len(stages) != CURRICULUM_STAGES:
        raise ValueError(f"curriculum needs {CURRICULUM_STAGES} stages, got {len(stages)}")
    angles = [s.meta.get("theta_max") for s in stages]
    if all(a is not None for a in angles) and any(b <= a for a, b in zip(angles, angles[1:])):
        raise ValueError(f"curriculum stages are not ordered by rotation range: {angles}")
    for ds in list(stages) + [valid, test]:
        if ds is not None:
            _check_task(model, ds)
    t = _Trainer(model, spec, [s.name for s in stages], valid)
    for k, stage in enumerate(stages):
        for _ in range(spec.stage_epochs):
            t.run_epoch(stage, stage=k)
            if log:
                log(_epoch_line(t.report.epochs[-1]))
    return t.finish(test)


def _epoch_line(r: EpochRecord) -> str:
    va = "-" if r.valid_accuracy is None else f"{r.valid_accuracy:.4f}"
    stage = "" if r.stage is None else f" stage {r.stage}"
    return (f"epoch {r.epoch}{stage}: loss {r.train_loss:.4f} train_acc {r.train_accuracy:.4f} "
            f"valid_acc {va}")


# -- experiment tables --------------------------------------------------------

@dataclass
class Cell:
    values: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values))

    def __str__(self) -> str:
        return f"{self.mean:.2f} ± {self.std:.3f}"


def aggregate(results: dict[tuple[str, str], list[float]]) -> dict[tuple[str, str], Cell]:
    return {k: Cell(list(v)) for k, v in results.items()}


def run_matrix(models: Sequence[str], dataset_groups: dict[str, list],
               seeds: Sequence[int], runner: Callable[[str, object, int], float]
               ) -> dict[tuple[str, str], Cell]:
    """Mean and standard deviation over seeds x datasets for every (model, group).

    ``runner(model_kind, dataset_entry, seed)`` trains one model and returns its
    test accuracy; ``dataset_groups`` maps a group label to its dataset entries.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    results: dict[tuple[str, str], list[float]] = {}
    for kind in models:
        for group, entries in dataset_groups.items():
            for entry in entries:
                for seed in seeds:
                    results.setdefault((kind, group), []).append(runner(kind, entry, seed))
    return aggregate(results)


def format_table(cells: dict[tuple[str, str], Cell], rows: Sequence[str],
                 cols: Sequence[str], extra_col: dict[str, str] | None = None,
                 extra_name: str = "Parameters", sep: str = "\t") -> str:
    header = ["model", *cols] + ([extra_name] if extra_col else [])
    out = [sep.join(header)]
    for r in rows:
        line = [r] + [str(cells[(r, c)]) if (r, c) in cells else "-" for c in cols]
        if extra_col:
            line.append(extra_col.get(r, "-"))
        out.append(sep.join(line))
    return "\n".join(out) + "\n"
