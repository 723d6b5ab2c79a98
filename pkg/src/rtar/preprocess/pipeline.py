"""Frame sampling and the per-pair preprocessing pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolationError
from ..mediaio import ClipMeta
from .flow import FlowParams, compute_flow
from .hog import HogParams, compute_hog, render_hog
from .resize import grayscale_bt601, resize_bilinear


@dataclass(frozen=True)
class PreprocessConfig:
    target_size: int = 112
    sample_frames_per_second: int = 3
    flow: FlowParams = field(default_factory=FlowParams)
    hog: HogParams = field(default_factory=HogParams)
    rng_seed: int = 0

    def __post_init__(self):
        if self.target_size < 16:
            raise ContractViolationError(f"target_size must be >= 16, got {self.target_size}")
        if self.sample_frames_per_second < 1:
            raise ContractViolationError("sample_frames_per_second must be positive")
        if self.target_size % self.hog.cell:
            raise ContractViolationError(
                f"target_size {self.target_size} must divide by the HOG cell {self.hog.cell}"
            )


def sample_frames(meta: ClipMeta, sample_fps: int, seed: int) -> list[tuple[int, int]]:
    """Pick frame-index pairs (i, i+1) for flow, a fixed count per second.

    Each whole second contributes sample_fps indices drawn uniformly
    without replacement from that second's frames (fewer when the second
    cannot supply that many), sorted ascending; a trailing partial second
    holding at least two frames contributes ceil(fraction * sample_fps).
    The clip's final frame is never selected since it has no successor.
    Deterministic for a given (meta, sample_fps, seed).
    """
    if sample_fps > meta.fps:
        raise ContractViolationError(
            f"sample_fps {sample_fps} exceeds clip fps {meta.fps}"
        )
    if sample_fps < 1:
        raise ContractViolationError("sample_fps must be positive")
    rng = np.random.default_rng(seed)
    last = meta.frame_count - 1
    pairs: list[tuple[int, int]] = []
    for start in range(0, meta.frame_count, meta.fps):
        stop = min(start + meta.fps, meta.frame_count)
        n_frames = stop - start
        if n_frames < meta.fps:  # trailing partial second
            if n_frames < 2:
                break
            want = math.ceil(n_frames / meta.fps * sample_fps)
        else:
            want = sample_fps
        eligible = [i for i in range(start, stop) if i != last]
        k = min(want, len(eligible))
        if k == 0:
            continue
        chosen = rng.choice(len(eligible), size=k, replace=False)
        pairs.extend((eligible[c], eligible[c] + 1) for c in sorted(chosen.tolist()))
    return pairs


def preprocess_pair(
    prev_frame: np.ndarray, next_frame: np.ndarray, config: PreprocessConfig = PreprocessConfig()
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One sampled pair -> the three stream inputs.

    Returns (rgb, flow, hog) float32 arrays of shapes (S, S, 3), (S, S, 2)
    and (S, S, 1) for S = config.target_size. rgb and hog are scaled to
    [0, 1]; flow keeps raw pixel displacements. The spatial and HOG
    streams see the earlier frame of the pair.
    """
    if prev_frame.shape != next_frame.shape:
        raise ContractViolationError(
            f"pair frames differ in shape: {prev_frame.shape} vs {next_frame.shape}"
        )
    s = config.target_size
    prev_r = resize_bilinear(prev_frame, s, s)
    next_r = resize_bilinear(next_frame, s, s)
    rgb = prev_r.astype(np.float32) / np.float32(255)
    gray_prev = grayscale_bt601(rgb)
    gray_next = grayscale_bt601(next_r.astype(np.float32) / np.float32(255))
    flow = compute_flow(gray_prev, gray_next, config.flow).astype(np.float32)
    hog_img = render_hog(compute_hog(gray_prev, config.hog), s, s)
    hog = (hog_img.astype(np.float32) / np.float32(255))[:, :, None]
    return rgb, flow, hog
