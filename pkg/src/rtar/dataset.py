"""Clip naming and split conventions, labels, and cache precomputation.

Clip names follow ``HandWash_XXX_A_YY_G_ZZ.avi`` with fixed field widths:
X is the 3-digit wash id, Y the 2-digit action class (01-12), Z the
2-digit background group. Split manifests are text files with
``[train]`` and ``[test]`` sections, one clip name per line; labels
files map ``clipname<TAB>class_id`` with zero-based model labels.
"""

from __future__ import annotations

import os
import re
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, FormatError
from . import mediaio
from .network import ClipSamples
from .preprocess import PreprocessConfig, preprocess_pair, sample_frames
from .preprocess.hog import compute_hog, render_hog
from .preprocess.resize import grayscale_bt601, resize_bilinear
from .preprocess.flow import compute_flow


@dataclass(frozen=True)
class ClipId:
    wash_id: int
    action_class: int
    group: int

    def __post_init__(self):
        if not 0 <= self.wash_id <= 999:
            raise ContractViolationError(f"wash_id {self.wash_id} outside [0, 999]")
        if not 1 <= self.action_class <= 12:
            raise ContractViolationError(f"action_class {self.action_class} outside [1, 12]")
        if not 0 <= self.group <= 99:
            raise ContractViolationError(f"group {self.group} outside [0, 99]")


_NAME_RE = re.compile(r"HandWash_(\d{3})_A_(\d{2})_G_(\d{2})\.avi")


def format_clip_name(cid: ClipId) -> str:
    return f"HandWash_{cid.wash_id:03d}_A_{cid.action_class:02d}_G_{cid.group:02d}.avi"


def parse_clip_name(name: str) -> ClipId:
    """Strict parse of the naming convention; errors name the offending field."""
    if not name.startswith("HandWash_"):
        raise FormatError(f"{name!r}: missing HandWash_ prefix", field="prefix")
    if not name.endswith(".avi"):
        raise FormatError(f"{name!r}: extension must be .avi", field="extension")
    m = _NAME_RE.fullmatch(name)
    if m is None:
        body = name[len("HandWash_"):-len(".avi")]
        parts = body.split("_")
        if len(parts) != 5 or parts[1] != "A" or parts[3] != "G":
            raise FormatError(f"{name!r}: expected HandWash_XXX_A_YY_G_ZZ.avi", field="layout")
        if not re.fullmatch(r"\d{3}", parts[0]):
            raise FormatError(f"{name!r}: field X must be 3 digits", field="X")
        if not re.fullmatch(r"\d{2}", parts[2]):
            raise FormatError(f"{name!r}: field Y must be 2 digits", field="Y")
        raise FormatError(f"{name!r}: field Z must be 2 digits", field="Z")
    x, y, z = int(m.group(1)), int(m.group(2)), int(m.group(3))
    if not 1 <= y <= 12:
        raise FormatError(f"{name!r}: field Y must be in [01, 12], got {y:02d}", field="Y")
    return ClipId(wash_id=x, action_class=y, group=z)


# ---------------------------------------------------------------------------
# Split manifests
# ---------------------------------------------------------------------------

@dataclass
class SplitManifest:
    train: list[str] = field(default_factory=list)
    test: list[str] = field(default_factory=list)


def load_split(path: str | os.PathLike) -> SplitManifest:
    """Parse a split manifest; every name must parse and the sections must
    be disjoint. An entirely empty file is valid but draws a warning."""
    with open(path, "rb") as f:
        try:
            text = f.read().decode("ascii")
        except UnicodeDecodeError as e:
            raise FormatError(f"split file is not ASCII: {e}", field="encoding") from None
    manifest = SplitManifest()
    section: list[str] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line == "[train]":
            section = manifest.train
            continue
        if line == "[test]":
            section = manifest.test
            continue
        if line.startswith("["):
            raise FormatError(f"line {lineno}: unknown section {line!r}", field="section")
        if section is None:
            raise FormatError(f"line {lineno}: clip name before any section", field="section")
        try:
            parse_clip_name(line)
        except FormatError as e:
            raise FormatError(f"line {lineno}: {e}", field=e.field) from None
        section.append(line)
    if not manifest.train and not manifest.test:
        warnings.warn(f"{path}: empty split manifest", stacklevel=2)
    overlap = sorted(set(manifest.train) & set(manifest.test))
    if overlap:
        raise FormatError(
            f"clips present in both sections: {', '.join(overlap)}", field="overlap"
        )
    return manifest


def save_split(manifest: SplitManifest, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(b"[train]\n")
        for name in manifest.train:
            f.write(name.encode("ascii") + b"\n")
        f.write(b"[test]\n")
        for name in manifest.test:
            f.write(name.encode("ascii") + b"\n")


def validate_split(
    manifest: SplitManifest, expected_counts: tuple[int, int] | None = None
) -> tuple[int, int]:
    """Re-check disjointness (and optional counts); returns (train, test) sizes."""
    overlap = sorted(set(manifest.train) & set(manifest.test))
    if overlap:
        raise FormatError(
            f"clips present in both sections: {', '.join(overlap)}", field="overlap"
        )
    counts = (len(manifest.train), len(manifest.test))
    if expected_counts is not None and counts != tuple(expected_counts):
        raise FormatError(
            f"split counts {counts} do not match expected {tuple(expected_counts)}",
            field="counts",
        )
    return counts


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------

def write_labels(labels: dict[str, int], path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        for name in sorted(labels):
            f.write(f"{name}\t{labels[name]}\n".encode("ascii"))


def read_labels(path: str | os.PathLike) -> dict[str, int]:
    labels: dict[str, int] = {}
    with open(path, "rb") as f:
        text = f.read().decode("ascii")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not re.fullmatch(r"\d+", parts[1]):
            raise FormatError(f"labels line {lineno}: expected name<TAB>class_id", field="label")
        labels[parts[0]] = int(parts[1])
    return labels


# ---------------------------------------------------------------------------
# Cache precomputation
# ---------------------------------------------------------------------------

def cache_names(clip_name: str, pair_index: int) -> tuple[str, str]:
    stem = clip_name[:-4] if clip_name.endswith(".avi") else clip_name
    return f"{stem}_p{pair_index}.flo", f"{stem}_p{pair_index}.pgm"


@dataclass
class CacheResult:
    index_path: str
    written: int
    skipped: int
    failures: list[tuple[str, str]]


def _write_if_changed(path: str, data: bytes) -> bool:
    """Write only when content differs; returns True when (re)written."""
    if os.path.exists(path):
        with open(path, "rb") as f:
            if f.read() == data:
                return False
    with open(path, "wb") as f:
        f.write(data)
    return True


def _flo_bytes(flow: np.ndarray) -> bytes:
    h, w = flow.shape[:2]
    return (mediaio.FLO_TAG.tobytes() + struct.pack("<ii", w, h)
            + flow.astype("<f4", copy=False).tobytes())


def _pgm_bytes(img: np.ndarray) -> bytes:
    h, w = img.shape[:2]
    return b"P5\n%d %d\n255\n" % (w, h) + img.tobytes()


def _cache_one_clip(clips_dir, name, config: PreprocessConfig, out_dir):
    clip_dir = os.path.join(clips_dir, name)
    meta = mediaio.read_clip_meta(os.path.join(clip_dir, "clip.meta"))
    pairs = sample_frames(meta, config.sample_frames_per_second, config.rng_seed)
    s = config.target_size
    rows = []
    written = skipped = 0
    for k, (i, j) in enumerate(pairs):
        prev = resize_bilinear(mediaio.read_frame(clip_dir, i, meta), s, s)
        nxt = resize_bilinear(mediaio.read_frame(clip_dir, j, meta), s, s)
        gray_prev = grayscale_bt601(prev.astype(np.float32) / np.float32(255))
        gray_next = grayscale_bt601(nxt.astype(np.float32) / np.float32(255))
        flow = compute_flow(gray_prev, gray_next, config.flow).astype(np.float32)
        hog_img = render_hog(compute_hog(gray_prev, config.hog), s, s)
        flo_name, pgm_name = cache_names(name, k)
        for path, data in ((flo_name, _flo_bytes(flow)), (pgm_name, _pgm_bytes(hog_img))):
            if _write_if_changed(os.path.join(out_dir, path), data):
                written += 1
            else:
                skipped += 1
        rows.append(f"{name}\t{k}\t{flo_name}\t{pgm_name}")
    return rows, written, skipped


def precompute_cache(
    clips_dir: str | os.PathLike,
    clip_names: list[str],
    config: PreprocessConfig,
    out_dir: str | os.PathLike,
    threads: int = 1,
) -> CacheResult:
    """Write per-pair ``.flo`` and HOG ``.pgm`` files plus a text index.

    Idempotent: files whose bytes already match are not rewritten. An
    unreadable clip is recorded as FAILED in the index and processing
    continues. Clips are processed in parallel; the index is written once
    at the end by a single writer.
    """
    os.makedirs(out_dir, exist_ok=True)
    results: dict[str, list[str]] = {}
    failures: list[tuple[str, str]] = []
    written = skipped = 0

    def work(name):
        return name, _cache_one_clip(clips_dir, name, config, out_dir)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(work, name): name for name in clip_names}
            for future in futures:
                name = futures[future]
                try:
                    _, (rows, w, s) = future.result()
                    results[name] = rows
                    written += w
                    skipped += s
                except (FormatError, OSError, ContractViolationError) as e:
                    failures.append((name, str(e)))
    else:
        for name in clip_names:
            try:
                _, (rows, w, s) = work(name)
                results[name] = rows
                written += w
                skipped += s
            except (FormatError, OSError, ContractViolationError) as e:
                failures.append((name, str(e)))

    index_path = os.path.join(out_dir, "cache.index")
    with open(index_path, "wb") as f:
        for name in clip_names:
            if name in results:
                for row in results[name]:
                    f.write(row.encode("ascii") + b"\n")
        for name, reason in sorted(failures):
            safe = reason.replace("\t", " ").replace("\n", " ")
            f.write(f"{name}\tFAILED\t{safe}\t-\n".encode("ascii"))
    return CacheResult(index_path=index_path, written=written, skipped=skipped,
                       failures=failures)


# ---------------------------------------------------------------------------
# Sample loading for training and evaluation
# ---------------------------------------------------------------------------

def load_clip_samples(
    clips_dir: str | os.PathLike,
    names: list[str],
    labels: dict[str, int],
    config: PreprocessConfig,
    cache_dir: str | os.PathLike | None = None,
) -> list[ClipSamples]:
    """Preprocess every sampled pair of the named clips into memory.

    With a cache directory, flow and HOG come from the cached files (the
    RGB input is recomputed; resizing is cheap) and missing cache entries
    fall back to direct computation.
    """
    out: list[ClipSamples] = []
    s = config.target_size
    for name in names:
        if name not in labels:
            raise ContractViolationError(f"no label for clip {name}")
        clip_dir = os.path.join(clips_dir, name)
        meta = mediaio.read_clip_meta(os.path.join(clip_dir, "clip.meta"))
        pairs = sample_frames(meta, config.sample_frames_per_second, config.rng_seed)
        triples = []
        for k, (i, j) in enumerate(pairs):
            prev = mediaio.read_frame(clip_dir, i, meta)
            flo_name, pgm_name = cache_names(name, k)
            flo_path = cache_dir and os.path.join(cache_dir, flo_name)
            pgm_path = cache_dir and os.path.join(cache_dir, pgm_name)
            if flo_path and os.path.exists(flo_path) and os.path.exists(pgm_path):
                rgb = resize_bilinear(prev, s, s).astype(np.float32) / np.float32(255)
                flow = mediaio.read_flo(flo_path)
                hog_img = mediaio.read_pgm(pgm_path)
                hog = (hog_img.astype(np.float32) / np.float32(255))[:, :, None]
            else:
                nxt = mediaio.read_frame(clip_dir, j, meta)
                rgb, flow, hog = preprocess_pair(prev, nxt, config)
            triples.append((rgb, flow, hog))
        out.append(ClipSamples(name=name, label=labels[name], pairs=triples))
    return out


def flatten_samples(clips: list[ClipSamples]) -> list[tuple]:
    """ClipSamples -> flat (rgb, flow, hog, label) training samples."""
    return [(rgb, flow, hog, clip.label) for clip in clips for rgb, flow, hog in clip.pairs]
