"""Experiment matrices behind the ``bench`` command, at desk or paper scale.

Desk scale keeps the published protocol (epochs, learning rate, curriculum)
but trims the number of datasets and, for Comparison, the number of samples,
so the whole suite fits on one CPU. Paper scale uses the published counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from . import analysis
from . import datagen as dg
from .models import GRAPH_KINDS, LAYER_KINDS, Model, config_for_dataset, count_params
from .trainer import TrainSpec, format_table

BENCHES = ("table1", "table2", "gen-matrix", "sweep", "distractors", "presets")
RANGES = {"3..8": (3, 8), "9..20": (9, 20), "21..30": (21, 30)}


@dataclass(frozen=True)
class Scale:
    name: str
    # Identification object counts per group label.
    ident_groups: dict[str, tuple[int, ...]]
    comp_groups: tuple[str, ...]
    ident_counts: tuple[int, int] = (10_000, 5_000)
    comp_counts: tuple[int, int] = (100_000, 10_000)
    matrix_train: tuple[str, ...] = ("3..8", "9..20", "21..30")
    ident_sweep: tuple[int, ...] = (10, 100, 1_000, 10_000)
    comp_sweep: tuple[int, ...] = (100, 1_000, 10_000, 100_000)
    sweep_n_obj: int = 5
    distractor_ident_n: tuple[int, ...] = (3, 4, 5, 6, 7, 8)
    nd_max: int = 3
    preset_n_obj: int = 5
    epochs: int = 20
    stage_epochs: int = 5
    # Optimizer steps per curriculum epoch; None means one pass over the stage.
    comp_steps_per_epoch: int | None = None
    data_seed: int = 0
    notes: dict[str, str] = field(default_factory=dict)


SCALES = {
    "desk": Scale(
        name="desk",
        ident_groups={"3..8": (5, 8)},
        comp_groups=("3..8",),
        comp_counts=(10_000, 2_000),
        # Keep the step count of 100k samples per stage at batch 128.
        comp_steps_per_epoch=782,
        matrix_train=("3..8",),
        comp_sweep=(100, 1_000, 10_000),
        distractor_ident_n=(5,),
        notes={
            "table1": "IDS_5 and IDS_8 only",
            "table2": "CDS_3_8 with 10k samples per curriculum stage, 2k eval, "
                      "100k-sample step budget",
            "gen-matrix": "trained on 3..8 only, 10k per stage, 100k-sample step budget",
            "sweep": "Identification on IDS_5; Comparison up to 10k per stage, "
                     "100k-sample step budget",
            "distractors": "IDS_5 and CDS_3_8 at 10k per stage",
            "presets": "5 objects",
        },
    ),
    "paper": Scale(
        name="paper",
        ident_groups={"3..8": tuple(range(3, 9)), "9..20": tuple(range(9, 21)),
                      "21..30": tuple(range(21, 31))},
        comp_groups=("3..8", "9..20", "21..30"),
    ),
}


def get_scale(name: str, **overrides) -> Scale:
    if name not in SCALES:
        raise ValueError(f"unknown scale {name!r}; expected one of {tuple(SCALES)}")
    return replace(SCALES[name], **overrides)


def _spec(scale: Scale, task: str = "identification") -> TrainSpec:
    steps = scale.comp_steps_per_epoch if task == "comparison" else None
    return TrainSpec(epochs=scale.epochs, stage_epochs=scale.stage_epochs, steps_per_epoch=steps)


def _gen(scale: Scale, task: str) -> dg.GenConfig:
    n_train, n_eval = scale.ident_counts if task == "identification" else scale.comp_counts
    return dg.GenConfig(n_train=n_train, n_eval=n_eval, seed=scale.data_seed)


def ident_data(scale: Scale, n_obj: int) -> dict:
    return dg.gen_identification(n_obj, _gen(scale, "identification"))


def comp_data(scale: Scale, label: str, train: bool = True) -> dict:
    return dg.gen_comparison_curriculum(RANGES[label], _gen(scale, "comparison"),
                                        stages=None if train else [])


def _param_column(kinds, groups: dict[str, list[dict]]) -> dict[str, str]:
    col = {}
    for kind in kinds:
        counts = []
        for entries in groups.values():
            c = count_params(Model(config_for_dataset(kind, analysis.first_train(entries[0]))))
            if c not in counts:
                counts.append(c)
        col[kind] = "/".join(str(c) for c in counts)
    return col


def _header(title: str, scale: Scale, key: str, seeds) -> str:
    note = scale.notes.get(key)
    extra = f"; {note}" if note else ""
    return f"# {title} ({scale.name} scale{extra}; seeds {list(seeds)})\n"


def table1(scale: Scale, seeds: Sequence[int], kinds: Sequence[str] = LAYER_KINDS,
           log=None) -> str:
    groups = {g: [ident_data(scale, n) for n in ns] for g, ns in scale.ident_groups.items()}
    cells = analysis.train_matrix(kinds, groups, seeds, _spec(scale), log)
    return (_header("Identification test accuracy", scale, "table1", seeds)
            + format_table(cells, kinds, list(groups), _param_column(kinds, groups)))


def table2(scale: Scale, seeds: Sequence[int], kinds: Sequence[str] = LAYER_KINDS,
           log=None) -> str:
    groups = {g: [comp_data(scale, g)] for g in scale.comp_groups}
    cells = analysis.train_matrix(kinds, groups, seeds, _spec(scale, "comparison"), log)
    return (_header("Comparison test accuracy", scale, "table2", seeds)
            + format_table(cells, kinds, list(groups), _param_column(kinds, groups)))


def gen_matrix(scale: Scale, seeds: Sequence[int], kinds: Sequence[str] = GRAPH_KINDS,
               log=None) -> str:
    data = {g: comp_data(scale, g, train=g in scale.matrix_train) for g in RANGES}
    tests = {g: d["test"] for g, d in data.items()}
    out = [_header("Comparison generalization across object counts", scale,
                   "gen-matrix", seeds)]
    for kind in kinds:
        ckpts = {}
        for g in scale.matrix_train:
            ckpts[g] = [analysis.fit(kind, data[g], s, _spec(scale, "comparison"), log)[0]
                        for s in seeds]
        cells = analysis.generalization_matrix(ckpts, tests)
        out.append(f"## {kind}\n" + analysis.format_generalization(cells, list(RANGES)))
    return "".join(out)


def sweep(scale: Scale, seeds: Sequence[int], kinds: Sequence[str] = GRAPH_KINDS,
          log=None) -> str:
    ident = ident_data(scale, scale.sweep_n_obj)
    comp = comp_data(scale, "3..8")
    ident_sizes = [s for s in scale.ident_sweep if s <= len(ident["train"])]
    comp_sizes = [s for s in scale.comp_sweep if s <= len(comp["train"][0])]
    ident_res = {k: analysis.sample_efficiency_sweep(k, ident, ident_sizes, seeds,
                                                     _spec(scale), log) for k in kinds}
    comp_res = {k: analysis.sample_efficiency_sweep(k, comp, comp_sizes, seeds,
                                                    _spec(scale, "comparison"), log)
                for k in kinds}
    return (_header("Reduced training sets (constant optimizer steps)", scale, "sweep", seeds)
            + "## Identification\n" + analysis.format_sweep(ident_res)
            + "## Comparison\n" + analysis.format_sweep(comp_res))


def distractors(scale: Scale, seeds: Sequence[int], kinds: Sequence[str] = GRAPH_KINDS,
                log=None) -> str:
    seed = scale.data_seed
    tasks = {
        "Identification": [analysis.with_distractors(ident_data(scale, n), scale.nd_max, seed)
                           for n in scale.distractor_ident_n],
        "Comparison": [analysis.with_distractors(comp_data(scale, "3..8"), scale.nd_max, seed)],
    }
    specs = {"Identification": _spec(scale), "Comparison": _spec(scale, "comparison")}
    cells = analysis.distractor_eval(kinds, tasks, seeds, specs, log)
    return (_header(f"Distractor datasets (n_d in 0..{scale.nd_max})", scale,
                    "distractors", seeds)
            + format_table(cells, kinds, list(tasks)))


def presets(scale: Scale, seeds: Sequence[int], kinds: Sequence[str] = GRAPH_KINDS,
            log=None) -> str:
    cells = analysis.preset_study(dg.PRESETS, kinds, scale.preset_n_obj, seeds,
                                  _gen(scale, "identification"), _spec(scale), log)
    return (_header("Preset reference configurations", scale, "presets", seeds)
            + format_table(cells, kinds, list(dg.PRESETS)))


RUNNERS: dict[str, Callable[..., str]] = {
    "table1": table1, "table2": table2, "gen-matrix": gen_matrix,
    "sweep": sweep, "distractors": distractors, "presets": presets,
}


def run_bench(name: str, scale: Scale, seeds: Sequence[int],
              kinds: Sequence[str] | None = None, log=None) -> str:
    if name not in RUNNERS:
        raise ValueError(f"unknown bench {name!r}; expected one of {BENCHES}")
    if not seeds:
        raise ValueError("need at least one seed")
    kw = {} if kinds is None else {"kinds": list(kinds)}
    return RUNNERS[name](scale, list(seeds), log=log, **kw)
