"""Coarse-to-fine pyramidal Horn-Schunck optical flow.

The estimator builds Gaussian pyramids of both frames, then from the
coarsest level to the finest: upsamples and rescales the flow carried so
far, warps the second frame back by it, and runs a fixed number of
Jacobi updates of the Horn-Schunck equations on the residual motion.
Derivatives use centered differences averaged over the frame pair, which
keeps the estimate equivariant under horizontal mirroring.

Intensities are expected in [0, 1] and are scaled by 255 internally so
the default smoothness weight sits at the classic operating point for
8-bit imagery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolationError
from .resize import bilinear_sample, resize_bilinear


@dataclass(frozen=True)
class FlowParams:
    pyramid_levels: int = 4
    scale: float = 0.5
    alpha: float = 15.0
    iterations: int = 50

    def __post_init__(self):
        if not 0 < self.scale < 1:
            raise ContractViolationError(f"pyramid scale must be in (0,1), got {self.scale}")
        if self.pyramid_levels < 1 or self.iterations < 1 or self.alpha <= 0:
            raise ContractViolationError("pyramid_levels, iterations and alpha must be positive")


# Weights of the Jacobi neighbourhood average (Horn-Schunck's u-bar / v-bar).
_AVG_OFFSETS = (
    (-1, -1, 1 / 12), (-1, 0, 1 / 6), (-1, 1, 1 / 12),
    (0, -1, 1 / 6), (0, 1, 1 / 6),
    (1, -1, 1 / 12), (1, 0, 1 / 6), (1, 1, 1 / 12),
)


def _neighbour_avg(f: np.ndarray) -> np.ndarray:
    p = np.pad(f, 1, mode="edge")
    h, w = f.shape
    out = np.zeros_like(f)
    for dy, dx, weight in _AVG_OFFSETS:
        out += np.asarray(weight, dtype=f.dtype) * p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
    return out


def _central_diff_x(f: np.ndarray) -> np.ndarray:
    p = np.pad(f, ((0, 0), (1, 1)), mode="edge")
    return np.asarray(0.5, dtype=f.dtype) * (p[:, 2:] - p[:, :-2])


def _central_diff_y(f: np.ndarray) -> np.ndarray:
    p = np.pad(f, ((1, 1), (0, 0)), mode="edge")
    return np.asarray(0.5, dtype=f.dtype) * (p[2:, :] - p[:-2, :])


def horn_schunck_step(
    u: np.ndarray, v: np.ndarray,
    fx: np.ndarray, fy: np.ndarray, ft: np.ndarray,
    alpha: float,
) -> tuple[np.ndarray, np.ndarray]:
    """One Jacobi update of the Horn-Schunck equations.

    u <- u_bar - fx (fx u_bar + fy v_bar + ft) / (alpha^2 + fx^2 + fy^2)
    and symmetrically for v, where the bars are neighbourhood averages.
    """
    u_bar = _neighbour_avg(u)
    v_bar = _neighbour_avg(v)
    common = (fx * u_bar + fy * v_bar + ft) / (alpha * alpha + fx * fx + fy * fy)
    return u_bar - fx * common, v_bar - fy * common


def _gaussian_blur(img: np.ndarray) -> np.ndarray:
    # separable binomial [1, 4, 6, 4, 1] / 16, edge-replicated
    kernel = np.array([1, 4, 6, 4, 1], dtype=img.dtype) / np.asarray(16, dtype=img.dtype)
    p = np.pad(img, ((2, 2), (0, 0)), mode="edge")
    img = sum(kernel[i] * p[i : i + img.shape[0], :] for i in range(5))
    p = np.pad(img, ((0, 0), (2, 2)), mode="edge")
    return sum(kernel[i] * p[:, i : i + img.shape[1]] for i in range(5))


def _build_pyramid(img: np.ndarray, levels: int, scale: float) -> list[np.ndarray]:
    """Finest level first; stops early once an extent would drop below 4 px."""
    pyramid = [img]
    for _ in range(levels - 1):
        prev = pyramid[-1]
        h = int(round(prev.shape[0] * scale))
        w = int(round(prev.shape[1] * scale))
        if h < 4 or w < 4:
            break
        pyramid.append(resize_bilinear(_gaussian_blur(prev), w, h))
    return pyramid


def _warp(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = img.shape
    grid_y, grid_x = np.meshgrid(
        np.arange(h, dtype=img.dtype), np.arange(w, dtype=img.dtype), indexing="ij"
    )
    return bilinear_sample(img, grid_y + v, grid_x + u)


def compute_flow(prev: np.ndarray, next: np.ndarray, params: FlowParams = FlowParams()) -> np.ndarray:
    """Dense flow (H, W, 2) from prev to next; channel 0 is u, channel 1 is v.

    u is positive rightward and v positive downward, both in pixels per
    frame. Inputs are real-valued grayscale images in [0, 1] with equal
    shapes.
    """
    if prev.shape != next.shape or prev.ndim != 2:
        raise ContractViolationError(
            f"frames must be equal-shaped 2-D grayscale, got {prev.shape} vs {next.shape}"
        )
    f1 = prev.astype(np.float32) * np.float32(255)
    f2 = next.astype(np.float32) * np.float32(255)
    pyr1 = _build_pyramid(f1, params.pyramid_levels, params.scale)
    pyr2 = _build_pyramid(f2, params.pyramid_levels, params.scale)
    alpha = float(params.alpha)

    u = np.zeros_like(pyr1[-1])
    v = np.zeros_like(pyr1[-1])
    for level in range(len(pyr1) - 1, -1, -1):
        p1, p2 = pyr1[level], pyr2[level]
        if u.shape != p1.shape:
            ratio_x = np.float32(p1.shape[1] / u.shape[1])
            ratio_y = np.float32(p1.shape[0] / u.shape[0])
            u = resize_bilinear(u, p1.shape[1], p1.shape[0]) * ratio_x
            v = resize_bilinear(v, p1.shape[1], p1.shape[0]) * ratio_y
        warped = _warp(p2, u, v)
        fx = np.asarray(0.5, np.float32) * (_central_diff_x(p1) + _central_diff_x(warped))
        fy = np.asarray(0.5, np.float32) * (_central_diff_y(p1) + _central_diff_y(warped))
        ft = warped - p1
        du = np.zeros_like(u)
        dv = np.zeros_like(v)
        for _ in range(params.iterations):
            du, dv = horn_schunck_step(du, dv, fx, fy, ft, alpha)
        u = u + du
        v = v + dv
    return np.stack([u, v], axis=-1)
