"""Scene objects and the similarity-transform algebra used by the generators.

A configuration is stored as an ``(n, 10)`` float64 matrix whose rows follow
the fixed feature layout ``[x, y, size, orientation, r, g, b, square, circle,
triangle]``. :class:`ObjectSpec` is the per-object view of one row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

TWO_PI = 2.0 * np.pi
WORLD_SIDE = 20.0
SIZE_RANGE = (0.5, 2.0)
SHAPES = ("square", "circle", "triangle")
FEATURE_NAMES = ("x", "y", "size", "orientation", "r", "g", "b",
                 "square", "circle", "triangle")
N_FEATURES = len(FEATURE_NAMES)

POS = slice(0, 2)
SIZE = 2
ORIENT = 3
COLOR = slice(4, 7)
SHAPE = slice(7, 10)


@dataclass(frozen=True)
class ObjectSpec:
    x: float
    y: float
    size: float
    orientation: float
    color: tuple[float, float, float]
    shape: str

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        if len(self.color) != 3:
            raise ValueError("color must have 3 components")


@dataclass(frozen=True)
class SimilarityParams:
    phi: float
    s: float
    t: tuple[float, float]

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"scale must be positive, got {self.s}")

    @classmethod
    def identity(cls) -> "SimilarityParams":
        return cls(0.0, 1.0, (0.0, 0.0))


def feature_vector(obj: ObjectSpec) -> np.ndarray:
    onehot = [0.0, 0.0, 0.0]
    onehot[SHAPES.index(obj.shape)] = 1.0
    return np.array([obj.x, obj.y, obj.size, obj.orientation, *obj.color, *onehot],
                    dtype=np.float64)


def decode(vec: Sequence[float]) -> ObjectSpec:
    """Inverse of :func:`feature_vector`; the shape block must be one-hot."""
    v = np.asarray(vec, dtype=np.float64)
    if v.shape != (N_FEATURES,):
        raise ValueError(f"feature vector must have length {N_FEATURES}, got {v.shape}")
    onehot = v[SHAPE]
    if not (np.count_nonzero(onehot == 1.0) == 1 and np.count_nonzero(onehot) == 1):
        raise ValueError(f"shape block is not one-hot: {onehot.tolist()}")
    return ObjectSpec(
        x=float(v[0]), y=float(v[1]), size=float(v[SIZE]),
        orientation=float(v[ORIENT]),
        color=(float(v[4]), float(v[5]), float(v[6])),
        shape=SHAPES[int(np.argmax(onehot))],
    )


class Configuration:
    """An ordered collection of objects whose order carries no meaning."""

    __slots__ = ("features",)

    def __init__(self, features):
        f = np.array(features, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] != N_FEATURES:
            raise ValueError(f"configuration features must be (n, {N_FEATURES}), got {f.shape}")
        self.features = f

    @classmethod
    def from_objects(cls, objects: Iterable[ObjectSpec]) -> "Configuration":
        rows = [feature_vector(o) for o in objects]
        return cls(np.array(rows).reshape(len(rows), N_FEATURES))

    @property
    def objects(self) -> list[ObjectSpec]:
        return [decode(row) for row in self.features]

    @property
    def positions(self) -> np.ndarray:
        return self.features[:, POS]

    @property
    def shapes(self) -> list[str]:
        return [SHAPES[i] for i in np.argmax(self.features[:, SHAPE], axis=1)]

    def __len__(self) -> int:
        return self.features.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.features.shape == other.features.shape and bool(
            np.array_equal(self.features, other.features))

    def __repr__(self) -> str:
        return f"Configuration(n_obj={len(self)})"

    def copy(self) -> "Configuration":
        return Configuration(self.features)


def rotation_matrix(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def barycenter(config: Configuration) -> np.ndarray:
    if len(config) == 0:
        raise ValueError("empty configuration")
    return config.positions.mean(axis=0)


def apply_similarity(config: Configuration, p: SimilarityParams,
                     covariant: bool = True) -> Configuration:
    """Rotate by ``phi`` and scale by ``s`` about the barycenter, then translate by ``t``.

    With ``covariant`` set, orientations rotate with the scene and sizes scale
    with it; otherwise only positions move.
    """
    b = barycenter(config)
    out = config.features.copy()
    # Written as a displacement so the identity transform is exact in floating point.
    linear = p.s * rotation_matrix(p.phi) - np.eye(2)
    out[:, POS] = config.positions + ((config.positions - b) @ linear.T + np.asarray(p.t))
    if covariant:
        out[:, SIZE] *= p.s
        out[:, ORIENT] = np.mod(out[:, ORIENT] + p.phi, TWO_PI)
    return Configuration(out)


def compose(p2: SimilarityParams, p1: SimilarityParams) -> SimilarityParams:
    """Parameters equivalent to applying ``p1`` then ``p2``.

    Both transforms act about the current barycenter and ``p1`` moves the
    barycenter by exactly ``t1``, so angles add, scales multiply and
    translations add.
    """
    return SimilarityParams(p1.phi + p2.phi, p1.s * p2.s,
                            (p1.t[0] + p2.t[0], p1.t[1] + p2.t[1]))


def perturb_features(features: np.ndarray, eps: float, rng: np.random.Generator,
                     positions: bool = True) -> np.ndarray:
    """Uniform noise of half-width ``eps`` times each feature's sampling range."""
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    out = features.copy()
    n = out.shape[0]
    # One (n, 7) draw keeps the stream layout identical with or without positions.
    noise = rng.uniform(-eps, eps, size=(n, 7))
    if positions:
        out[:, POS] += noise[:, 0:2] * WORLD_SIDE
    out[:, SIZE] += noise[:, 2] * SIZE_RANGE[1]
    out[:, ORIENT] = np.mod(out[:, ORIENT] + noise[:, 3] * TWO_PI, TWO_PI)
    out[:, COLOR] = np.clip(out[:, COLOR] + noise[:, 4:7], 0.0, 1.0)
    return out


def perturb(config: Configuration, eps: float, rng: np.random.Generator) -> Configuration:
    return Configuration(perturb_features(config.features, eps, rng))
