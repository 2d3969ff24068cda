"""Identification and Comparison dataset generation.

Randomness is drawn from numpy's PCG64 seeded through :class:`numpy.random.SeedSequence`.
Every sample owns a substream keyed by ``(seed, split, i)``, so a dataset is a
pure function of its seed and parameters and samples can be produced in any
order or in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataset import CompSample, Dataset, IdentSample
from .geometry import (
    COLOR, N_FEATURES, ORIENT, POS, SHAPE, SIZE, SIZE_RANGE, TWO_PI, WORLD_SIDE,
    Configuration, SimilarityParams, apply_similarity, perturb_features,
)

GENERATOR_VERSION = "spatialsim-datagen/1"

CURRICULUM_ANGLES = (
    np.pi / 10,
    np.pi / 2 + np.pi / 10,
    np.pi + np.pi / 10,
    3 * np.pi / 2 + np.pi / 10,
    2 * np.pi,
)

PRESETS = ("same-point", "line", "scattered-red-circles", "colored-circles", "random-diverse")

# Substream keys. Identification splits use 1-3, curriculum stages 10-14.
_REF, _TRAIN, _VALID, _TEST = 0, 1, 2, 3
_STAGE0 = 10
_COMP_VALID, _COMP_TEST = 20, 21
_LABELS, _SAMPLES = 0, 1


@dataclass(frozen=True)
class CurriculumSpec:
    theta_max_list: tuple[float, ...] = CURRICULUM_ANGLES

    def __post_init__(self):
        th = self.theta_max_list
        if any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError("curriculum angles must be strictly increasing")
        if th[-1] != TWO_PI:
            raise ValueError("last curriculum stage must allow the full rotation range")


@dataclass(frozen=True)
class GenConfig:
    """Generation settings. ``None`` counts resolve to the per-task defaults."""

    eps: float = 0.01
    world_side: float = WORLD_SIDE
    size_range: tuple[float, float] = SIZE_RANGE
    n_train: int | None = None
    n_eval: int | None = None
    seed: int = 0
    # Rotate orientations and scale sizes along with positions.
    covariant: bool = True

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")
        for name in ("n_train", "n_eval"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive, got {v}")

    def counts(self, task: str) -> tuple[int, int]:
        default = (10_000, 5_000) if task == "identification" else (100_000, 10_000)
        return (self.n_train or default[0], self.n_eval or default[1])


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def position_bound(eps: float) -> float:
    """Per-object alignment residual that positive samples stay within."""
    return 2.0 * eps * WORLD_SIDE


# -- single configurations ----------------------------------------------------

def _random_objects(n_obj: int, rng: np.random.Generator,
                    gen: GenConfig | None = None) -> np.ndarray:
    side = gen.world_side if gen else WORLD_SIDE
    lo, hi = gen.size_range if gen else SIZE_RANGE
    f = np.zeros((n_obj, N_FEATURES))
    f[:, POS] = rng.uniform(0.0, side, size=(n_obj, 2))
    f[:, SIZE] = rng.uniform(lo, hi, size=n_obj)
    f[:, ORIENT] = rng.uniform(0.0, TWO_PI, size=n_obj)
    f[:, COLOR] = rng.uniform(0.0, 1.0, size=(n_obj, 3))
    f[np.arange(n_obj), SHAPE.start + rng.integers(0, 3, size=n_obj)] = 1.0
    return f


def sample_reference(n_obj: int, rng: np.random.Generator,
                     gen: GenConfig | None = None) -> Configuration:
    if n_obj <= 0:
        raise ValueError(f"n_obj must be positive, got {n_obj}")
    return Configuration(_random_objects(n_obj, rng, gen))


def random_similarity(rng: np.random.Generator, theta_max: float = TWO_PI,
                      gen: GenConfig | None = None) -> SimilarityParams:
    side = gen.world_side if gen else WORLD_SIDE
    phi = rng.uniform(0.0, theta_max)
    s = rng.uniform(0.5, 2.0)
    t = rng.uniform(0.0, side, size=2)
    return SimilarityParams(float(phi), float(s), (float(t[0]), float(t[1])))


def _positive(ref: Configuration, gen: GenConfig, rng: np.random.Generator,
              theta_max: float, params: SimilarityParams | None) -> Configuration:
    noisy = Configuration(perturb_features(ref.features, gen.eps, rng))
    p = params if params is not None else random_similarity(rng, theta_max, gen)
    return apply_similarity(noisy, p, gen.covariant)


def _negative(ref: Configuration, gen: GenConfig, rng: np.random.Generator,
              theta_max: float, params: SimilarityParams | None) -> Configuration:
    f = perturb_features(ref.features, gen.eps, rng, positions=False)
    f[:, POS] = rng.uniform(0.0, gen.world_side, size=(len(ref), 2))
    p = params if params is not None else random_similarity(rng, theta_max, gen)
    return apply_similarity(Configuration(f), p, gen.covariant)


def make_ident_positive(ref: Configuration, gen: GenConfig, rng: np.random.Generator,
                        params: SimilarityParams | None = None) -> Configuration:
    """Perturbed copy of ``ref`` moved by a random (or the given) similarity."""
    return _positive(ref, gen, rng, TWO_PI, params)


def make_ident_negative(ref: Configuration, gen: GenConfig, rng: np.random.Generator,
                        params: SimilarityParams | None = None) -> Configuration:
    """Same object identities as ``ref`` at freshly drawn positions, then a random similarity."""
    return _negative(ref, gen, rng, TWO_PI, params)


def make_comp_sample(n_range: tuple[int, int], theta_max: float, label: int,
                     gen: GenConfig, rng: np.random.Generator,
                     params: SimilarityParams | None = None) -> CompSample:
    n_min, n_max = n_range
    if not 1 <= n_min <= n_max:
        raise ValueError(f"invalid object-count range {n_range}")
    if not 0 < theta_max <= TWO_PI:
        raise ValueError(f"theta_max must lie in (0, 2*pi], got {theta_max}")
    n = int(rng.integers(n_min, n_max + 1))
    first = sample_reference(n, rng, gen)
    make = _positive if label == 1 else _negative
    return CompSample(label, first, make(first, gen, rng, theta_max, params))


# -- whole datasets -----------------------------------------------------------

def balanced_labels(n: int, rng: np.random.Generator) -> np.ndarray:
    labels = np.zeros(n, dtype=np.int64)
    labels[: n // 2] = 1
    return labels[rng.permutation(n)]


def _ident_split(ref: Configuration, gen: GenConfig, split: int, count: int,
                 name: str) -> Dataset:
    labels = balanced_labels(count, substream(gen.seed, split, _LABELS))
    configs = []
    for i, lab in enumerate(labels):
        rng = substream(gen.seed, split, _SAMPLES, i)
        make = make_ident_positive if lab == 1 else make_ident_negative
        configs.append(make(ref, gen, rng).features)
    meta = _meta(name, "identification", (len(ref), len(ref)), TWO_PI, gen)
    meta["reference"] = ref.features.tolist()
    return Dataset("identification", labels, configs, None, meta)


def _meta(name: str, task: str, n_range, theta_max: float, gen: GenConfig) -> dict:
    return {
        "name": name,
        "task": task,
        "n_obj": [int(n_range[0]), int(n_range[1])],
        "theta_max": float(theta_max),
        "eps": float(gen.eps),
        "seed": int(gen.seed),
        "generator": GENERATOR_VERSION,
    }


def gen_identification(n_obj: int, gen: GenConfig,
                       reference: Configuration | None = None,
                       name: str | None = None) -> dict:
    """Reference configuration plus balanced train/valid/test sets.

    Returns ``{"ref", "train", "valid", "test"}``. A preset ``reference`` may
    replace the randomly drawn one.
    """
    n_train, n_eval = gen.counts("identification")
    ref = reference if reference is not None else sample_reference(
        n_obj, substream(gen.seed, _REF), gen)
    base = name or f"IDS_{len(ref)}"
    return {
        "ref": ref,
        "train": _ident_split(ref, gen, _TRAIN, n_train, base),
        "valid": _ident_split(ref, gen, _VALID, n_eval, f"{base}_valid"),
        "test": _ident_split(ref, gen, _TEST, n_eval, f"{base}_test"),
    }


def _comp_split(n_range, theta_max: float, gen: GenConfig, split: int, count: int,
                name: str) -> Dataset:
    labels = balanced_labels(count, substream(gen.seed, split, _LABELS))
    first, second = [], []
    for i, lab in enumerate(labels):
        s = make_comp_sample(n_range, theta_max, int(lab), gen,
                             substream(gen.seed, split, _SAMPLES, i))
        first.append(s.config1.features)
        second.append(s.config2.features)
    meta = _meta(name, "comparison", n_range, theta_max, gen)
    return Dataset("comparison", labels, first, second, meta)


def gen_comparison_curriculum(n_range: tuple[int, int], gen: GenConfig,
                              curriculum: CurriculumSpec = CurriculumSpec(),
                              stages: list[int] | None = None) -> dict:
    """Five curriculum training sets plus full-rotation valid and test sets.

    ``stages`` restricts which training stages are generated (all by default);
    skipped stages are ``None``.
    """
    n_train, n_eval = gen.counts("comparison")
    a, b = n_range
    wanted = range(len(curriculum.theta_max_list)) if stages is None else stages
    train = [
        _comp_split(n_range, th, gen, _STAGE0 + k, n_train, f"CDS_{a}_{b}_{k}")
        if k in wanted else None
        for k, th in enumerate(curriculum.theta_max_list)
    ]
    return {
        "train": train,
        "valid": _comp_split(n_range, TWO_PI, gen, _COMP_VALID, n_eval, f"CDS_{a}_{b}_valid"),
        "test": _comp_split(n_range, TWO_PI, gen, _COMP_TEST, n_eval, f"CDS_{a}_{b}_test"),
    }


# -- distractors and presets --------------------------------------------------

def _with_extra(features: np.ndarray, n_d: int, rng: np.random.Generator) -> np.ndarray:
    if n_d == 0:
        return features
    return np.vstack([features, _random_objects(n_d, rng)])


def add_distractors(sample, n_d: int, rng: np.random.Generator):
    """Append ``n_d`` fresh random objects to every configuration of ``sample``."""
    if n_d < 0:
        raise ValueError(f"n_d must be non-negative, got {n_d}")
    if isinstance(sample, IdentSample):
        return IdentSample(sample.label, Configuration(_with_extra(sample.config.features, n_d, rng)))
    return CompSample(sample.label,
                      Configuration(_with_extra(sample.config1.features, n_d, rng)),
                      Configuration(_with_extra(sample.config2.features, n_d, rng)))


def distractor_name(name: str, nd_max: int) -> str:
    """``IDS_5_valid`` becomes ``IDS_5_d3_valid``; split and stage suffixes stay last."""
    parts = name.split("_")
    if parts[-1] in ("valid", "test") or (parts[0] == "CDS" and len(parts) == 4):
        return "_".join(parts[:-1] + [f"d{nd_max}", parts[-1]])
    return f"{name}_d{nd_max}"


def distractor_dataset(ds: Dataset, nd_max: int, seed: int, name: str | None = None) -> Dataset:
    """Copy of ``ds`` where sample i gains ``n_d ~ U{0..nd_max}`` distractors per configuration."""
    first, second = [], []
    for i in range(len(ds)):
        rng = substream(seed, 99, i)
        n_d = int(rng.integers(0, nd_max + 1))
        first.append(_with_extra(ds.configs1[i], n_d, rng))
        if ds.configs2 is not None:
            second.append(_with_extra(ds.configs2[i], n_d, rng))
    meta = dict(ds.meta)
    meta["name"] = name or distractor_name(ds.meta.get("name", "dataset"), nd_max)
    meta["distractors"] = [0, int(nd_max)]
    meta["distractor_seed"] = int(seed)
    lo, hi = meta["n_obj"]
    meta["n_obj"] = [lo, hi + int(nd_max)]
    return Dataset(ds.task, ds.labels.copy(), first,
                   second if ds.configs2 is not None else None, meta)


def preset_config(kind: str, n_obj: int, rng: np.random.Generator) -> Configuration:
    """Reference configurations of graded difficulty.

    ``same-point``, ``line`` and ``scattered-red-circles`` use identical red
    circles of size 1; ``colored-circles`` gives scattered circles random
    colours; ``random-diverse`` is an ordinary random reference.
    """
    if n_obj <= 0:
        raise ValueError(f"n_obj must be positive, got {n_obj}")
    if kind not in PRESETS:
        raise ValueError(f"unknown preset {kind!r}; expected one of {PRESETS}")
    if kind == "random-diverse":
        return sample_reference(n_obj, rng)
    f = np.zeros((n_obj, N_FEATURES))
    f[:, SIZE] = 1.0
    f[:, COLOR] = (1.0, 0.0, 0.0)
    f[:, SHAPE.start + 1] = 1.0
    centre = WORLD_SIDE / 2
    if kind == "same-point":
        f[:, POS] = centre
    elif kind == "line":
        f[:, 0] = centre + np.arange(n_obj) - (n_obj - 1) / 2
        f[:, 1] = centre
    else:
        f[:, POS] = rng.uniform(0.0, WORLD_SIDE, size=(n_obj, 2))
        if kind == "colored-circles":
            f[:, COLOR] = rng.uniform(0.0, 1.0, size=(n_obj, 3))
    return Configuration(f)


def gen_preset(kind: str, n_obj: int, gen: GenConfig) -> dict:
    ref = preset_config(kind, n_obj, substream(gen.seed, _REF))
    return gen_identification(n_obj, gen, reference=ref, name=f"PRESET_{kind}_{n_obj}")


def with_counts(gen: GenConfig, n_train: int, n_eval: int) -> GenConfig:
    return replace(gen, n_train=n_train, n_eval=n_eval)
