"""Command-line entry point: dataset generation, training, evaluation, heatmaps, benches.

Exit status is 0 on success, 1 for user errors (bad flags, missing or
malformed files, incompatible task and model) and 2 for anything unexpected.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analysis, bench
from . import datagen as dg
from .dataset import DatasetFormatError, dataset_path, read_dataset, write_dataset
from .models import LAYER_KINDS, Model, config_for_dataset
from .trainer import Checkpoint, TrainSpec, evaluate, train, train_curriculum

log = logging.getLogger("spatialsim")

TASK_NAMES = {"ident": "identification", "comp": "comparison"}


class UserError(Exception):
    """Problems with the command line or its inputs."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UserError(message)


def _write_all(out: Path, datasets) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for ds in datasets:
        if ds is not None:
            paths.append(write_dataset(dataset_path(out, ds.name), ds))
    return paths


def _report(paths) -> None:
    for p in paths:
        print(p)


# -- generation -----------------------------------------------------------------

def cmd_gen_ident(a) -> None:
    gen = dg.GenConfig(eps=a.eps, n_train=a.train, n_eval=a.eval, seed=a.seed)
    sets = dg.gen_identification(a.n_obj, gen)
    _report(_write_all(Path(a.out), [sets["train"], sets["valid"], sets["test"]]))


def cmd_gen_comp(a) -> None:
    if a.n_min > a.n_max:
        raise UserError(f"--n-min {a.n_min} is larger than --n-max {a.n_max}")
    gen = dg.GenConfig(eps=a.eps, n_train=a.train, n_eval=a.eval, seed=a.seed)
    sets = dg.gen_comparison_curriculum((a.n_min, a.n_max), gen)
    _report(_write_all(Path(a.out), [*sets["train"], sets["valid"], sets["test"]]))


def cmd_gen_distractors(a) -> None:
    base = Path(a.base)
    files = sorted(base.glob("*.jsonl"))
    if not files:
        raise UserError(f"no dataset files in {base}")
    out = Path(a.out) if a.out else base.with_name(f"{base.name}_d{a.nd_max}")
    written = []
    for k, f in enumerate(files):
        ds = read_dataset(f)
        if "distractors" in ds.meta:
            continue
        dist = dg.distractor_dataset(ds, a.nd_max, a.seed + 1000 * (k + 1))
        written += _write_all(out, [dist])
    _report(written)


def cmd_gen_preset(a) -> None:
    gen = dg.GenConfig(eps=a.eps, n_train=a.train, n_eval=a.eval, seed=a.seed)
    sets = dg.gen_preset(a.kind, a.n_obj, gen)
    _report(_write_all(Path(a.out), [sets["train"], sets["valid"], sets["test"]]))


# -- training and evaluation ------------------------------------------------------

def _load(path: Path):
    if not path.exists():
        raise UserError(f"no such dataset: {path}")
    return read_dataset(path)


def _find_data(directory: Path, task: str):
    """Locate train/valid/test files of one dataset family inside ``directory``."""
    files = {f.stem: f for f in directory.glob("*.jsonl")}
    valid = [s for s in files if s.endswith("_valid")]
    prefix = "IDS_" if task == "identification" else "CDS_"
    valid = [s for s in valid if s.startswith(prefix)
             or (task == "identification" and s.startswith("PRESET_"))]
    if len(valid) != 1:
        raise UserError(f"expected exactly one {task} dataset family in {directory}, "
                        f"found {len(valid)}")
    base = valid[0][: -len("_valid")]
    out = {"valid": _load(files[f"{base}_valid"])}
    if f"{base}_test" in files:
        out["test"] = _load(files[f"{base}_test"])
    if task == "identification":
        if base not in files:
            raise UserError(f"missing training file {base}.jsonl")
        out["train"] = _load(files[base])
    else:
        stages = [files.get(f"{base}_{k}") for k in range(5)]
        if any(s is None for s in stages):
            raise UserError(f"missing curriculum stages for {base} in {directory}")
        out["train"] = [_load(s) for s in stages]
    return out


def cmd_train(a) -> None:
    task = TASK_NAMES[a.task]
    data = _find_data(Path(a.data), task)
    spec = TrainSpec(epochs=a.epochs, stage_epochs=a.stage_epochs, lr=a.lr,
                     batch_size=a.batch, seed=a.seed, selection=a.selection,
                     max_steps=a.max_steps, steps_per_epoch=a.steps_per_epoch)
    first = data["train"][0] if isinstance(data["train"], list) else data["train"]
    model = Model(config_for_dataset(a.model, first), a.seed)
    progress = (lambda s: log.info(s))
    if task == "comparison" and not a.no_curriculum:
        ckpt, report = train_curriculum(model, data["train"], data["valid"], spec,
                                        data.get("test"), progress)
    else:
        train_set = data["train"]
        if isinstance(train_set, list):
            train_set = train_set[-1]
        ckpt, report = train(model, {"train": train_set, "valid": data["valid"],
                                     "test": data.get("test")}, spec, progress)
    ckpt.save(a.out)
    if a.report:
        Path(a.report).write_text(report.to_json_line() + "\n")
    print(report.summary())


def _load_ckpt(path) -> Checkpoint:
    if not Path(path).exists():
        raise UserError(f"no such checkpoint: {path}")
    return Checkpoint.load(path)


def cmd_eval(a) -> None:
    ckpt = _load_ckpt(a.ckpt)
    ds = _load(Path(a.data))
    if ckpt.config.task != ds.task:
        raise UserError(f"checkpoint is for {ckpt.config.task} but {a.data} is {ds.task}")
    print(f"accuracy\t{evaluate(ckpt, ds):.6f}")


def cmd_heatmap(a) -> None:
    ckpt = _load_ckpt(a.ckpt)
    ds = _load(Path(a.data))
    if ckpt.config.task != ds.task:
        raise UserError(f"checkpoint is for {ckpt.config.task} but {a.data} is {ds.task}")
    if not 0 <= a.sample < len(ds):
        raise UserError(f"sample {a.sample} out of range for {len(ds)} samples")
    sample = ds[a.sample]
    n = len(sample.config if hasattr(sample, "config") else sample.config1)
    if not 0 <= a.object < n:
        raise UserError(f"object {a.object} out of range for {n} objects")
    hm = analysis.heatmap(ckpt, sample, a.object, a.res)
    prefix = Path(a.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    grid = analysis.write_grid(prefix.with_name(prefix.name + ".txt"), hm)
    meta = prefix.with_name(prefix.name + ".json")
    meta.write_text(json.dumps({"extent": hm.extent, "object_index": hm.object_index,
                                "star": hm.star, "star_cell": hm.star_cell,
                                "star_value": hm.star_value}, sort_keys=True) + "\n")
    paths = [grid, meta]
    if not a.no_image:
        paths.append(analysis.write_ppm(prefix.with_name(prefix.name + ".ppm"), hm))
    _report(paths)


def cmd_bench(a) -> None:
    overrides = {}
    base = bench.SCALES.get(a.scale)
    if base is not None and (a.train is not None or a.eval is not None):
        for key in ("ident_counts", "comp_counts"):
            n_train, n_eval = getattr(base, key)
            overrides[key] = (a.train or n_train, a.eval or n_eval)
        overrides["notes"] = {name: "custom sample counts" for name in bench.BENCHES}
    if a.epochs is not None:
        overrides["epochs"] = a.epochs
    if a.stage_epochs is not None:
        overrides["stage_epochs"] = a.stage_epochs
    if a.comp_steps is not None:
        overrides["comp_steps_per_epoch"] = a.comp_steps
    scale = bench.get_scale(a.scale, **overrides)
    kinds = a.models.split(",") if a.models else None
    if kinds:
        unknown = [k for k in kinds if k not in LAYER_KINDS]
        if unknown:
            raise UserError(f"unknown model kinds {unknown}")
    text = bench.run_bench(a.name, scale, list(range(a.seeds)), kinds,
                           log=lambda s: log.info(s))
    if a.out:
        Path(a.out).parent.mkdir(parents=True, exist_ok=True)
        Path(a.out).write_text(text)
    print(text, end="")


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spatialsim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-ident", help="write IDS_N train/valid/test files")
    g.add_argument("--n-obj", type=int, required=True)
    g.add_argument("--train", type=int, default=10_000)
    g.add_argument("--eval", type=int, default=5_000)
    g.add_argument("--eps", type=float, default=0.01)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_ident)

    g = sub.add_parser("gen-comp", help="write CDS_A_B curriculum, valid and test files")
    g.add_argument("--n-min", type=int, required=True)
    g.add_argument("--n-max", type=int, required=True)
    g.add_argument("--train", type=int, default=100_000)
    g.add_argument("--eval", type=int, default=10_000)
    g.add_argument("--eps", type=float, default=0.01)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_comp)

    g = sub.add_parser("gen-distractors", help="add distractor objects to every dataset in a directory")
    g.add_argument("--base", required=True)
    g.add_argument("--nd-max", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="output directory (default: DIR_dN next to --base)")
    g.set_defaults(func=cmd_gen_distractors)

    g = sub.add_parser("gen-preset", help="Identification data around a preset reference")
    g.add_argument("--kind", choices=dg.PRESETS, required=True)
    g.add_argument("--n-obj", type=int, required=True)
    g.add_argument("--train", type=int, default=10_000)
    g.add_argument("--eval", type=int, default=5_000)
    g.add_argument("--eps", type=float, default=0.01)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_preset)

    g = sub.add_parser("train", help="train one model and save a checkpoint")
    g.add_argument("--task", choices=tuple(TASK_NAMES), required=True)
    g.add_argument("--model", choices=LAYER_KINDS, required=True)
    g.add_argument("--data", required=True, help="directory holding one dataset family")
    g.add_argument("--epochs", type=int, default=20)
    g.add_argument("--stage-epochs", type=int, default=5)
    g.add_argument("--lr", type=float, default=1e-3)
    g.add_argument("--batch", type=int, default=128)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--selection", choices=("best-valid", "last"), default="best-valid")
    g.add_argument("--max-steps", type=int)
    g.add_argument("--steps-per-epoch", type=int,
                   help="fixed optimizer steps per epoch, cycling small sets (default: one pass)")
    g.add_argument("--no-curriculum", action="store_true",
                   help="comparison only: train on the full-rotation stage alone")
    g.add_argument("--report", help="also write the run report as one JSON line")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("eval", help="print the accuracy of a checkpoint on a dataset file")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--data", required=True)
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("heatmap", help="sweep one object and write the H grid")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--sample", type=int, default=0)
    g.add_argument("--object", type=int, default=0)
    g.add_argument("--res", type=int, default=100)
    g.add_argument("--no-image", action="store_true")
    g.add_argument("--out", required=True, help="output prefix")
    g.set_defaults(func=cmd_heatmap)

    g = sub.add_parser("bench", help="run an experiment matrix and print its table")
    g.add_argument("name", choices=bench.BENCHES)
    g.add_argument("--seeds", type=int, default=3)
    g.add_argument("--scale", choices=tuple(bench.SCALES), default="desk")
    g.add_argument("--models", help="comma-separated subset of model kinds")
    g.add_argument("--train", type=int, help="override training samples per set")
    g.add_argument("--eval", type=int, help="override evaluation samples per set")
    g.add_argument("--epochs", type=int)
    g.add_argument("--stage-epochs", type=int)
    g.add_argument("--comp-steps", type=int,
                   help="optimizer steps per Comparison epoch (desk default 782)")
    g.add_argument("--out", help="also write the report here")
    g.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UserError as e:
        print(f"spatialsim: error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        args.func(args)
    except (UserError, DatasetFormatError, FileNotFoundError) as e:
        print(f"spatialsim: error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        # Argument values the library rejects (e.g. n_obj <= 0, eps < 0).
        print(f"spatialsim: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"spatialsim: internal error: {e!r}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
