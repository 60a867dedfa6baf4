"""Error metrics, report serialization, field image export, benchmarks."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Dataset, denormalize
from .errors import IoFailure, OutOfRange, ShapeMismatch, ZeroTargetNorm
from .panel import Freestream
from .unet import UNet

TARGET_CHANNELS = ("pressure", "vel_x", "vel_y")


def relative_error(outputs: np.ndarray, targets: np.ndarray,
                   channel: int | str) -> float:
    """Sum of |out - target| over the set divided by the sum of |target|,
    for one channel of (N, 3, H, W) stacks. The ratio pools cells and
    samples before dividing, so near-zero cells cannot blow it up."""
    if isinstance(channel, str):
        try:
            channel = TARGET_CHANNELS.index(channel)
        except ValueError:
            raise OutOfRange(f"unknown channel {channel!r}") from None
    if not 0 <= channel < 3:
        raise OutOfRange(f"channel index {channel} outside [0, 3)")
    if outputs.shape != targets.shape:
        raise ShapeMismatch(f"outputs {outputs.shape} vs targets {targets.shape}")
    denom = float(np.abs(targets[:, channel]).sum())
    if denom == 0.0:
        raise ZeroTargetNorm(f"channel {TARGET_CHANNELS[channel]} target sums to zero")
    return float(np.abs(outputs[:, channel] - targets[:, channel]).sum()) / denom


def absolute_error_denorm(outputs: np.ndarray, targets: np.ndarray,
                          norms: np.ndarray, freestreams: list[Freestream],
                          variant: str) -> float:
    """De-normalize both stacks per sample and average |difference| over
    every cell, channel, and sample."""
    if outputs.shape != targets.shape:
        raise ShapeMismatch(f"outputs {outputs.shape} vs targets {targets.shape}")
    if len(freestreams) != len(outputs):
        raise ShapeMismatch(f"{len(freestreams)} freestreams for {len(outputs)} samples")
    total = 0.0
    for out, tgt, fs in zip(outputs, targets, freestreams):
        diff = denormalize(out, norms, fs, variant) - denormalize(tgt, norms, fs, variant)
        total += float(np.abs(diff).mean())
    return total / len(outputs)


@dataclass
class EvalReport:
    split: str
    variant: str
    channel_errors: dict[str, float]
    average: float
    mean_abs_denorm: float
    per_sample: list[tuple[int, str, float, float, float]] = field(default_factory=list)
    timing: dict[str, float] | None = None

    def to_text(self) -> str:
        lines = [f"split {self.split}", f"variant {self.variant}"]
        for name in TARGET_CHANNELS:
            lines.append(f"{name} relative_error {self.channel_errors[name]:.9g}")
        lines.append(f"average relative_error {self.average:.9g}")
        lines.append(f"mean_abs_denorm {self.mean_abs_denorm:.9g}")
        if self.timing is not None:
            for k in sorted(self.timing):
                lines.append(f"timing {k} {self.timing[k]:.9g}")
        lines.append("sample,shape,rel_pressure,rel_vel_x,rel_vel_y")
        for idx, name, rp, rx, ry in self.per_sample:
            lines.append(f"{idx},{name},{rp:.9g},{rx:.9g},{ry:.9g}")
        return "\n".join(lines) + "\n"

    def write(self, path: Path | str) -> None:
        try:
            Path(path).write_text(self.to_text())
        except OSError as e:
            raise IoFailure(f"cannot write report {path}: {e}") from e


def predict(model: UNet, inputs: np.ndarray, batch_size: int = 10) -> np.ndarray:
    """Eval-mode forward over a whole array, batched to bound memory."""
    outs = np.empty_like(inputs)
    for i0 in range(0, len(inputs), batch_size):
        xb = inputs[i0:i0 + batch_size]
        outs[i0:i0 + len(xb)] = model.forward(ad.Tensor(xb), training=False).data
    return outs


def evaluate_model(model: UNet, dataset: Dataset, split: str = "test",
                   batch_size: int = 10) -> EvalReport:
    """Relative errors on normalized quantities plus the de-normalized
    absolute error, over one split of a dataset."""
    if split not in dataset.split_indices:
        raise OutOfRange(f"unknown split {split!r}")
    idx = dataset.split_indices[split]
    if len(idx) == 0:
        raise OutOfRange(f"dataset has no {split!r} samples")
    inputs, targets = dataset.inputs[idx], dataset.targets[idx]
    outputs = predict(model, inputs, batch_size)

    channel_errors = {name: relative_error(outputs, targets, i)
                      for i, name in enumerate(TARGET_CHANNELS)}
    average = sum(channel_errors.values()) / len(TARGET_CHANNELS)
    fss = [dataset.freestreams[i] for i in idx]
    mean_abs = absolute_error_denorm(outputs, targets, dataset.norms, fss,
                                     dataset.variant)

    per_sample = []
    for row, i in enumerate(idx):
        o, t = outputs[row:row + 1], targets[row:row + 1]
        errs = []
        for ch in range(3):
            try:
                errs.append(relative_error(o, t, ch))
            except ZeroTargetNorm:
                errs.append(float("nan"))
        per_sample.append((int(i), dataset.names[i], *errs))
    return EvalReport(split=split, variant=dataset.variant,
                      channel_errors=channel_errors, average=average,
                      mean_abs_denorm=mean_abs, per_sample=per_sample)


def _to_gray(plane: np.ndarray) -> np.ndarray:
    """Min-max scaled uint8 image; a constant plane maps to mid-gray.

    Row 0 of the output is the top of the physical domain (max y), so the
    image is the grid flipped vertically."""
    lo, hi = float(plane.min()), float(plane.max())
    if hi == lo:
        img = np.full(plane.shape, 128, dtype=np.uint8)
    else:
        img = np.clip(np.rint((plane - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)
    return img[::-1]


def _write_pgm(path: Path, img: np.ndarray) -> None:
    h, w = img.shape
    try:
        path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())
    except OSError as e:
        raise IoFailure(f"cannot write image {path}: {e}") from e


def export_field_images(target: np.ndarray, output: np.ndarray,
                        path_prefix: Path | str) -> list[Path]:
    """Per channel, write target / output / absolute-error grayscale PGMs,
    each min-max normalized independently. Returns the written paths."""
    if target.shape != output.shape or target.shape[0] != 3:
        raise ShapeMismatch(f"expected matching (3, H, W) stacks, got {target.shape} / {output.shape}")
    prefix = Path(path_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    written = []
    for ch, name in enumerate(TARGET_CHANNELS):
        for kind, plane in (("target", target[ch]), ("output", output[ch]),
                            ("error", np.abs(output[ch] - target[ch]))):
            p = prefix.parent / f"{prefix.name}_{name}_{kind}.pgm"
            _write_pgm(p, _to_gray(np.asarray(plane, dtype=np.float64)))
            written.append(p)
    return written


def bench_inference(model: UNet, batch_sizes: tuple[int, ...] = (1, 8),
                    repeats: int = 20, warmup: int = 3) -> list[dict[str, float]]:
    """Median/mean wall-clock per sample for each batch size, eval mode."""
    if repeats < 1:
        raise OutOfRange(f"repeats {repeats} must be >= 1")
    res = model.config.resolution
    rows = []
    for bs in batch_sizes:
        x = np.zeros((bs, 3, res, res), dtype=np.float32)
        for _ in range(warmup):
            model.forward(ad.Tensor(x), training=False)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            model.forward(ad.Tensor(x), training=False)
            times.append((time.perf_counter() - t0) / bs)
        rows.append({"batch_size": float(bs),
                     "median_ms_per_sample": float(np.median(times) * 1e3),
                     "mean_ms_per_sample": float(np.mean(times) * 1e3),
                     "min_ms_per_sample": float(np.min(times) * 1e3)})
    return rows
