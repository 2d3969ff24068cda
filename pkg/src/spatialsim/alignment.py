"""Least-squares similarity alignment of 2-D point sets (Umeyama's method)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Alignment:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    residuals: np.ndarray

    @property
    def angle(self) -> float:
        """Rotation angle in [0, 2*pi)."""
        return float(np.mod(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]), 2 * np.pi))

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max())

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation


def umeyama(src: np.ndarray, dst: np.ndarray) -> Alignment:
    """Find s, R, t minimising sum ||dst_i - (s R src_i + t)||^2.

    ``residuals`` holds the per-point distance left after the fit, measured in
    the units of ``dst``.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2:
        raise ValueError(f"point sets must share an (n, d) shape, got {src.shape} and {dst.shape}")
    n, d = src.shape
    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    xs = src - mu_src
    xd = dst - mu_dst

    cov = xd.T @ xs / n
    u, sig, vt = np.linalg.svd(cov)
    flip = np.ones(d)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        flip[-1] = -1.0
    rot = u @ np.diag(flip) @ vt

    var_src = (xs ** 2).sum() / n
    scale = float((sig * flip).sum() / var_src) if var_src > 0 else 1.0
    trans = mu_dst - scale * rot @ mu_src
    fitted = scale * src @ rot.T + trans
    residuals = np.linalg.norm(dst - fitted, axis=1)
    return Alignment(scale, rot, trans, residuals)
