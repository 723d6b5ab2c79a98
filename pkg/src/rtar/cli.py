"""The ``rtar`` command: preprocessing, training, evaluation, offline and
live runs, dataset tooling, and stage benchmarks.

Settings resolve as flags > config file (``key=value`` lines) > defaults,
and every run prints its fully resolved configuration as ``#``-prefixed
header lines (on stderr for ``run``, whose stdout is the event log).
All randomness flows from ``--seed``. Commands exit 0 on success and 2
on usage or validation errors with a one-line reason.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .errors import ContractViolationError, FormatError
from . import dataset as ds
from . import mediaio, network, runtime, synth
from .preprocess import (
    FlowParams,
    HogParams,
    PreprocessConfig,
    compute_flow,
    compute_hog,
    preprocess_pair,
    render_hog,
    resize_bilinear,
)
from .preprocess.resize import grayscale_bt601


class UsageError(Exception):
    pass


# dest -> (default, type); config-file keys use the dest name
OPTION_DEFAULTS: dict[str, tuple] = {
    "seed": (0, int),
    "threads": (None, int),  # falls back to RTAR_THREADS, then 1
    "target_size": (112, int),
    "sample_fps": (3, int),
    "pyramid_levels": (4, int),
    "flow_scale": (0.5, float),
    "alpha": (15.0, float),
    "iterations": (50, int),
    "growth": (12, int),
    "blocks": ("4,4", str),
    "bottleneck": (4, int),
    "compression": (0.5, float),
    "streams": ("rgb,flow,hog", str),
    "bn": (True, bool),
    "classes": (0, int),  # 0 = infer from labels
    "epochs": (10, int),
    "lr": (0.05, float),
    "momentum": (0.9, float),
    "batch": (8, int),
    "threshold": (0.0, float),
    "poll_interval": (0.5, float),
    "stipulated_time": (2.0, float),
    "window_seconds": (1.0, float),
    "clips_per_class": (10, int),
    "fps": (8, int),
    "duration": (2.0, float),
    "resolution": (64, int),
    "groups": (5, int),
    "test_fraction": (0.2, float),
    "frames": (20, int),
    "expect_train": (-1, int),
    "expect_test": (-1, int),
    "section": ("test", str),
}


def _coerce(key: str, raw: str):
    default, typ = OPTION_DEFAULTS[key]
    if typ is bool:
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise UsageError(f"config key {key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise UsageError(f"config key {key}: cannot parse {raw!r} as {typ.__name__}") from None


def _read_config_file(path: str) -> dict:
    values = {}
    try:
        with open(path, "r", encoding="ascii") as f:
            lines = f.readlines()
    except OSError as e:
        raise UsageError(f"cannot read config file: {e}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in OPTION_DEFAULTS:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value.strip())
    return values


class Settings:
    """Resolved options: flags beat the config file, which beats defaults."""

    def __init__(self, args: argparse.Namespace):
        file_values = _read_config_file(args.config) if getattr(args, "config", None) else {}
        self._values = {}
        for key, (default, _) in OPTION_DEFAULTS.items():
            flag = getattr(args, key, None)
            if flag is not None:
                self._values[key] = flag
            elif key in file_values:
                self._values[key] = file_values[key]
            else:
                self._values[key] = default
        if self._values["threads"] is None:
            env = os.environ.get("RTAR_THREADS", "")
            self._values["threads"] = int(env) if env.isdigit() and int(env) > 0 else 1

    def __getattr__(self, key):
        try:
            return self._values[key]
        except KeyError:
            raise AttributeError(key) from None

    def header(self, command: str, keys: list[str]) -> list[str]:
        lines = [f"# command={command}"]
        for key in ["seed", "threads"] + keys:
            lines.append(f"# {key}={self._values[key]}")
        return lines

    def preprocess_config(self) -> PreprocessConfig:
        return PreprocessConfig(
            target_size=self.target_size,
            sample_frames_per_second=self.sample_fps,
            flow=FlowParams(pyramid_levels=self.pyramid_levels, scale=self.flow_scale,
                            alpha=self.alpha, iterations=self.iterations),
            hog=HogParams(),
            rng_seed=self.seed,
        )

    def model_config(self, num_classes: int) -> network.ModelConfig:
        blocks = tuple(int(b) for b in str(self.blocks).split(",") if b)
        streams = tuple(s.strip() for s in str(self.streams).split(",") if s.strip())
        return network.ModelConfig(
            num_classes=num_classes, growth_rate=self.growth, blocks=blocks,
            bottleneck_factor=self.bottleneck, compression=self.compression,
            input_size=self.target_size, bn_enabled=self.bn, streams=streams,
        )

    def runtime_config(self) -> runtime.RuntimeConfig:
        return runtime.RuntimeConfig(
            poll_interval=self.poll_interval, threshold_confidence=self.threshold,
            stipulated_time=self.stipulated_time, window_seconds=self.window_seconds,
            fps=self.fps,
        )


def _clip_names_in(clips_dir: str) -> list[str]:
    if not os.path.isdir(clips_dir):
        raise UsageError(f"not a directory: {clips_dir}")
    names = []
    for entry in sorted(os.listdir(clips_dir)):
        if os.path.isdir(os.path.join(clips_dir, entry)):
            try:
                ds.parse_clip_name(entry)
            except FormatError:
                continue
            names.append(entry)
    if not names:
        raise UsageError(f"no clip directories found in {clips_dir}")
    return names


def _emit(lines, stream=None):
    stream = stream or sys.stdout
    for line in lines:
        print(line, file=stream)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    s = Settings(args)
    _emit(s.header("preprocess", ["target_size", "sample_fps", "pyramid_levels",
                                  "flow_scale", "alpha", "iterations"]))
    names = _clip_names_in(args.clips)
    result = ds.precompute_cache(args.clips, names, s.preprocess_config(), args.out,
                                 threads=s.threads)
    print(f"cached {len(names) - len(result.failures)} clips: "
          f"{result.written} files written, {result.skipped} unchanged")
    for name, reason in result.failures:
        print(f"failed {name}: {reason}")
    print(f"index: {result.index_path}")
    return 0


def _load_sections(data_dir: str):
    split_path = os.path.join(data_dir, "split.txt")
    labels_path = os.path.join(data_dir, "labels.tsv")
    if not os.path.exists(split_path) or not os.path.exists(labels_path):
        raise UsageError(f"{data_dir} must contain split.txt and labels.tsv")
    manifest = ds.load_split(split_path)
    labels = ds.read_labels(labels_path)
    return manifest, labels


def cmd_train(args) -> int:
    s = Settings(args)
    _emit(s.header("train", ["target_size", "sample_fps", "growth", "blocks",
                             "compression", "bottleneck", "streams", "bn",
                             "epochs", "lr", "momentum", "batch"]))
    manifest, labels = _load_sections(args.data)
    if not manifest.train:
        raise UsageError("split.txt has an empty [train] section")
    num_classes = s.classes or (max(labels.values()) + 1)
    pre = s.preprocess_config()
    clips = ds.load_clip_samples(args.data, manifest.train, labels, pre,
                                 cache_dir=args.cache)
    samples = ds.flatten_samples(clips)
    model = network.FusionModel(s.model_config(num_classes), seed=s.seed)
    hyper = network.TrainConfig(lr=s.lr, momentum=s.momentum, epochs=s.epochs,
                                batch=s.batch, seed=s.seed)
    history = network.train(model, samples, hyper)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "model.ckpt")
    network.save_model(model, ckpt)
    with open(os.path.join(args.out, "loss_history.tsv"), "wb") as f:
        for epoch, loss in enumerate(history):
            f.write(f"{epoch}\t{loss:.6f}\n".encode("ascii"))
    print(f"trained on {len(samples)} samples from {len(clips)} clips")
    print(f"final epoch loss: {history[-1]:.6f}")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_eval(args) -> int:
    s = Settings(args)
    _emit(s.header("eval", ["target_size", "sample_fps", "threshold", "section"]))
    model = network.load_model(args.checkpoint)
    manifest, labels = _load_sections(args.data)
    names = manifest.test if s.section == "test" else manifest.train
    if not names:
        raise UsageError(f"split section [{s.section}] is empty")
    pre = s.preprocess_config()
    if model.config.input_size != pre.target_size:
        raise UsageError(
            f"checkpoint expects {model.config.input_size}px inputs, "
            f"preprocess target_size is {pre.target_size}"
        )
    clips = ds.load_clip_samples(args.data, names, labels, pre, cache_dir=args.cache)
    report = network.evaluate(model, clips, threshold_confidence=s.threshold)
    print(f"clips evaluated      {report.clip_count}")
    print(f"clip accuracy        {report.accuracy:.4f}")
    print(f"frame accuracy       {report.frame_accuracy:.4f}")
    print(f"below-threshold rate {report.below_threshold_rate:.4f}")
    print("per-class accuracy")
    for cls, acc in report.per_class.items():
        print(f"  class {cls:<3d} {acc:.4f}")
    return 0


def cmd_run(args) -> int:
    s = Settings(args)
    _emit(s.header("run", ["target_size", "sample_fps", "threshold", "poll_interval",
                           "stipulated_time", "window_seconds"]), stream=sys.stderr)
    model = network.load_model(args.checkpoint)
    pre = s.preprocess_config()
    if model.config.input_size != pre.target_size:
        raise UsageError(
            f"checkpoint expects {model.config.input_size}px inputs, "
            f"preprocess target_size is {pre.target_size}"
        )
    config = s.runtime_config()
    if args.live:
        meta = mediaio.read_clip_meta(os.path.join(args.clip, "clip.meta"))

        def replay():
            start = time.monotonic()
            for i in range(meta.frame_count):
                due = i / meta.fps
                lag = due - (time.monotonic() - start)
                if lag > 0:
                    time.sleep(lag)
                yield due, mediaio.read_frame(args.clip, i, meta)

        lines, dropped = runtime.run_pipeline_live(replay(), model, config, pre)
        _emit(lines)
        print(f"# dropped_frames={dropped}", file=sys.stderr)
    else:
        _emit(runtime.run_pipeline_offline(args.clip, model, config, pre))
    return 0


def cmd_dataset(args) -> int:
    s = Settings(args)
    if args.action == "validate":
        _emit(s.header("dataset validate", ["expect_train", "expect_test"]))
        manifest = ds.load_split(args.manifest)
        expected = None
        if s.expect_train >= 0 or s.expect_test >= 0:
            expected = (s.expect_train, s.expect_test)
        counts = ds.validate_split(manifest, expected)
        print(f"train clips {counts[0]}")
        print(f"test clips  {counts[1]}")
        return 0
    if args.action == "synth":
        _emit(s.header("dataset synth", ["classes", "clips_per_class", "fps",
                                         "duration", "resolution", "groups"]))
        config = synth.SynthConfig(
            num_classes=s.classes or 4, clips_per_class=s.clips_per_class,
            fps=s.fps, duration_s=s.duration, resolution=s.resolution,
            groups=s.groups,
        )
        result = synth.generate_synthetic(config, seed=s.seed, out_dir=args.out)
        print(f"generated {len(result.clip_names)} clips in {result.out_dir}")
        print(f"labels: {result.labels_path}")
        print(f"split:  {result.split_path} "
              f"({len(result.manifest.train)} train / {len(result.manifest.test)} test)")
        return 0
    if args.action == "split":
        _emit(s.header("dataset split", ["test_fraction"]))
        names = _clip_names_in(args.clips)
        groups = sorted({ds.parse_clip_name(n).group for n in names})
        n_test = max(1, round(s.test_fraction * len(groups)))
        if n_test >= len(groups):
            raise UsageError(f"test_fraction {s.test_fraction} leaves no training groups")
        test_groups = set(groups[-n_test:])
        manifest = ds.SplitManifest()
        for name in names:
            section = manifest.test if ds.parse_clip_name(name).group in test_groups else manifest.train
            section.append(name)
        ds.save_split(manifest, args.out)
        print(f"wrote {args.out}: {len(manifest.train)} train / {len(manifest.test)} test "
              f"(test groups: {sorted(test_groups)})")
        return 0
    raise UsageError(f"unknown dataset action {args.action!r}")


def _percentile(values: list[float], q: float) -> float:
    return float(np.percentile(np.array(values), q))


def cmd_bench(args) -> int:
    s = Settings(args)
    _emit(s.header("bench", ["frames", "target_size", "growth", "blocks", "compression"]))
    rng = np.random.default_rng(s.seed)
    size = s.target_size
    n = s.frames
    model = network.FusionModel(s.model_config(num_classes=4), seed=s.seed)
    h, w, d = model.feature_shape

    src = [rng.integers(0, 256, (2 * size, 2 * size, 3), dtype=np.uint8) for _ in range(2)]
    gray = [grayscale_bt601(resize_bilinear(f, size, size).astype(np.float32) / np.float32(255))
            for f in src]
    rgb = resize_bilinear(src[0], size, size).astype(np.float32) / np.float32(255)
    flow_in = rng.standard_normal((size, size, 2)).astype(np.float32)
    hog_in = rng.random((size, size, 1)).astype(np.float32)
    maps = [rng.standard_normal((h, w, d)).astype(np.float32) for _ in range(3)]
    pre = s.preprocess_config()

    stages = {
        "resize": lambda: resize_bilinear(src[0], size, size),
        "flow": lambda: compute_flow(gray[0], gray[1], pre.flow),
        "hog": lambda: render_hog(compute_hog(gray[0], pre.hog), size, size),
        "stream_forward": lambda: model.streams[model.config.streams[0]].forward(rgb),
        "fuse_head": lambda: model.head.forward(
            network.concat_fuse(*maps).mean(axis=(0, 1))
        ),
    }
    if "rgb" not in model.config.streams:
        stages["stream_forward"] = lambda: model.streams[model.config.streams[0]].forward(
            {"rgb": rgb, "flow": flow_in, "hog": hog_in}[model.config.streams[0]]
        )

    results = {}
    for name, fn in stages.items():
        fn()  # warmup
        times = []
        for _ in range(n):
            t0 = time.perf_counter()
            fn()
            times.append((time.perf_counter() - t0) * 1000)
        results[name] = (float(np.mean(times)), _percentile(times, 95))

    print(f"{'stage':<16}{'mean_ms':>10}{'p95_ms':>10}   ({n} samples each)")
    for name, (mean, p95) in results.items():
        print(f"{name:<16}{mean:>10.2f}{p95:>10.2f}")
    combined = sum(results[k][0] for k in ("resize", "flow", "hog"))
    print(f"{'pre_combined':<16}{combined:>10.2f}{'':>10}")
    if combined > 140.0:
        print(f"warning: preprocessing mean {combined:.1f} ms exceeds the 140 ms "
              f"reference budget", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None, help="master random seed")
    p.add_argument("--config", default=None, help="key=value settings file")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: RTAR_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rtar",
        description="three-stream real-time action recognition pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="precompute flow/HOG cache for clips")
    p.add_argument("--clips", required=True)
    p.add_argument("--out", required=True)
    for flag in ("--target-size", "--sample-fps", "--pyramid-levels", "--iterations"):
        p.add_argument(flag, type=int, default=None)
    p.add_argument("--flow-scale", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    _add_common(p)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="train a model on a clip dataset")
    p.add_argument("--data", required=True, help="dir with clips, labels.tsv, split.txt")
    p.add_argument("--out", required=True)
    p.add_argument("--cache", default=None, help="precomputed cache dir")
    for flag in ("--target-size", "--sample-fps", "--growth", "--bottleneck",
                 "--classes", "--epochs", "--batch", "--pyramid-levels", "--iterations"):
        p.add_argument(flag, type=int, default=None)
    for flag in ("--lr", "--momentum", "--compression", "--flow-scale", "--alpha"):
        p.add_argument(flag, type=float, default=None)
    p.add_argument("--blocks", default=None, help="dense block sizes, e.g. 4,4")
    p.add_argument("--streams", default=None, help="subset of rgb,flow,hog")
    p.add_argument("--bn", dest="bn", action="store_true", default=None)
    p.add_argument("--no-bn", dest="bn", action="store_false", default=None)
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split section")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--cache", default=None)
    p.add_argument("--section", choices=("train", "test"), default=None)
    for flag in ("--target-size", "--sample-fps", "--pyramid-levels", "--iterations"):
        p.add_argument(flag, type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--flow-scale", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    _add_common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("run", help="classify a clip, emitting the event log")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--live", action="store_true",
                   help="replay at wall-clock speed (non-deterministic)")
    for flag in ("--target-size", "--sample-fps", "--pyramid-levels", "--iterations"):
        p.add_argument(flag, type=int, default=None)
    for flag in ("--threshold", "--poll-interval", "--stipulated-time",
                 "--window-seconds", "--flow-scale", "--alpha"):
        p.add_argument(flag, type=float, default=None)
    _add_common(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("dataset", help="dataset tooling")
    p.add_argument("action", choices=("validate", "split", "synth"))
    p.add_argument("--manifest", default=None, help="split file (validate)")
    p.add_argument("--clips", default=None, help="clip tree (split)")
    p.add_argument("--out", default=None, help="output dir or file")
    p.add_argument("--expect-train", type=int, default=None)
    p.add_argument("--expect-test", type=int, default=None)
    p.add_argument("--test-fraction", type=float, default=None)
    for flag in ("--classes", "--clips-per-class", "--fps", "--resolution", "--groups"):
        p.add_argument(flag, type=int, default=None)
    p.add_argument("--duration", type=float, default=None)
    _add_common(p)
    p.set_defaults(fn=cmd_dataset)

    p = sub.add_parser("bench", help="per-stage timing table")
    for flag in ("--frames", "--target-size", "--growth", "--bottleneck",
                 "--pyramid-levels", "--iterations"):
        p.add_argument(flag, type=int, default=None)
    p.add_argument("--blocks", default=None)
    p.add_argument("--compression", type=float, default=None)
    p.add_argument("--flow-scale", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--streams", default=None)
    _add_common(p)
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # required argument presence beyond argparse's reach
    if args.command == "dataset":
        need = {"validate": ["manifest"], "split": ["clips", "out"],
                "synth": ["out"]}[args.action]
        for attr in need:
            if getattr(args, attr) is None:
                print(f"error: dataset {args.action} requires --{attr}", file=sys.stderr)
                return 2
    try:
        return args.fn(args)
    except (UsageError, FormatError, ContractViolationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
