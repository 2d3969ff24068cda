"""Independent reference computations used by the tests."""

from __future__ import annotations

import itertools

import numpy as np


def central_difference(f, x: np.ndarray, index, h: float = 1e-6) -> float:
    """d f / d x[index] by central differences; restores ``x`` afterwards."""
    old = x[index]
    x[index] = old + h
    fp = f()
    x[index] = old - h
    fm = f()
    x[index] = old
    return (fp - fm) / (2 * h)


def rel_error(a: float, b: float, floor: float = 1e-4) -> float:
    # The floor keeps near-zero gradients from amplifying finite-difference round-off.
    return abs(a - b) / max(abs(a), abs(b), floor)


def fd_check_store(loss_fn, store, n_probes: int, rng: np.random.Generator,
                   h: float = 1e-6) -> float:
    """Largest relative error between ``store`` grads and central differences.

    ``loss_fn()`` must return the scalar loss as a float computed from the
    current parameter values; gradients must already be in ``store``.
    """
    names = list(store)
    sizes = np.array([store[n].data.size for n in names])
    picks = rng.choice(len(names), size=n_probes, p=sizes / sizes.sum())
    worst = 0.0
    for k in picks:
        p = store[names[k]]
        idx = np.unravel_index(rng.integers(p.data.size), p.data.shape)
        num = central_difference(loss_fn, p.data, idx, h)
        worst = max(worst, rel_error(float(p.grad[idx]), num))
    return worst


def direct_sum(points) -> np.ndarray:
    total = [0.0, 0.0]
    for x, y in points:
        total[0] += x
        total[1] += y
    return np.array(total) / len(points)


def triangle_area(a, b, c) -> float:
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))


def max_collinearity_defect(points) -> float:
    return max((triangle_area(a, b, c) for a, b, c in itertools.combinations(points, 3)),
               default=0.0)


def closed_form_adam(theta: float, grads, lr: float, b1=0.9, b2=0.999, eps=1e-8) -> float:
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


def similarity_residual(src, dst) -> float:
    """Largest point residual after the least-squares fit dst ~ a * src + b over complex numbers.

    A complex factor ``a`` is exactly a rotation plus uniform scale, so this is
    a closed-form similarity alignment written independently of the SVD route.
    """
    zs = np.asarray(src, dtype=float) @ np.array([1.0, 1j])
    zd = np.asarray(dst, dtype=float) @ np.array([1.0, 1j])
    cs, cd = zs - zs.mean(), zd - zd.mean()
    denom = np.vdot(cs, cs).real
    a = np.vdot(cs, cd) / denom if denom > 0 else 0.0
    return float(np.max(np.abs(cd - a * cs)))
