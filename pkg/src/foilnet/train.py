"""Supervised training: Adam on L1 loss with halfway linear lr decay.

A run is bitwise deterministic for a fixed config: weight init, batch
order, and dropout draws all derive from the config seed.
"""

from __future__ import annotations

import ctypes
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .errors import ConfigInvalid, Diverged, OutOfRange, ShapeMismatch
from .unet import UNet, UNetConfig, build, count_parameters, save_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    data: str                      # dataset manifest path
    out_dir: str
    channel_exponent: int = 5
    iterations: int = 4_000
    batch_size: int = 10
    lr: float = 4e-4
    betas: tuple[float, float] = (0.5, 0.999)
    eps: float = 1e-8
    seed: int = 0
    val_every: int = 200
    dropout: float = 0.01

    def __post_init__(self):
        if self.iterations <= 0:
            raise ConfigInvalid(f"iterations {self.iterations} must be positive")
        if self.lr <= 0.0:
            raise ConfigInvalid(f"lr {self.lr} must be positive")
        if self.batch_size < 1:
            raise ConfigInvalid(f"batch_size {self.batch_size} must be >= 1")
        if self.val_every < 1:
            raise ConfigInvalid(f"val_every {self.val_every} must be >= 1")


@dataclass
class RunRecord:
    seed: int
    rows: list[tuple[int, float, float | None, float]] = field(default_factory=list)
    final_checkpoint: str = ""
    best_checkpoint: str = ""
    diverged: bool = False

    @property
    def final_train_loss(self) -> float:
        return self.rows[-1][1]

    @property
    def final_val_loss(self) -> float:
        vals = [r[2] for r in self.rows if r[2] is not None]
        if not vals:
            raise OutOfRange("run recorded no validation loss")
        return vals[-1]

    def write(self, path: Path | str) -> None:
        lines = ["# iteration train_loss val_loss lr"]
        for it, tl, vl, lr in self.rows:
            v = f"{vl:.9g}" if vl is not None else "-"
            lines.append(f"{it} {tl:.9g} {v} {lr:.9g}")
        if self.diverged:
            lines.append("# diverged")
        Path(path).write_text("\n".join(lines) + "\n")


def lr_at(config: TrainConfig, iteration: int) -> float:
    """Constant for the first half, then linear down to 0.1*lr at the end."""
    n = config.iterations
    if not 0 <= iteration < n:
        raise OutOfRange(f"iteration {iteration} outside [0, {n})")
    half = n // 2
    if iteration <= half:
        return config.lr
    if iteration == n - 1:
        return config.lr * 0.1
    t = (iteration - half) / (n - 1 - half)
    return config.lr * (1.0 - 0.9 * t)


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: list[tuple[str, ad.Tensor]]):
        self.step = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params}
        self.v = {name: np.zeros_like(p.data) for name, p in params}


def adam_step(params: list[tuple[str, ad.Tensor]], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, betas: tuple[float, float] = (0.5, 0.999),
              eps: float = 1e-8) -> None:
    """One in-place Adam update with bias correction."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params:
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"{name}: grad shape {g.shape} != param {p.data.shape}")
        m, v = state.m[name], state.v[name]
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def _tune_allocator() -> None:
    """Ask glibc to recycle big blocks instead of unmapping them each
    iteration (measurably faster on this workload); harmless no-op elsewhere."""
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
    except (OSError, AttributeError):
        pass


def _mean_l1(model: UNet, inputs: np.ndarray, targets: np.ndarray,
             batch_size: int) -> float:
    """Eval-mode L1 over a whole split, sample-weighted."""
    total = 0.0
    for i0 in range(0, len(inputs), batch_size):
        xb = inputs[i0:i0 + batch_size]
        out = model.forward(ad.Tensor(xb), training=False)
        total += float(np.abs(out.data - targets[i0:i0 + batch_size]).mean()) * len(xb)
    return total / len(inputs)


def train(config: TrainConfig, dataset: Dataset | None = None) -> RunRecord:
    """Run the training loop; writes record.txt, final.ckpt and (when a
    validation split exists) best.ckpt under config.out_dir."""
    _tune_allocator()
    ds = dataset if dataset is not None else Dataset(config.data)
    x_train, y_train = ds.arrays("train")
    x_val, y_val = ds.arrays("val")
    if len(x_train) == 0:
        raise ConfigInvalid(f"{config.data}: dataset has no train split")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model = build(UNetConfig(channel_exponent=config.channel_exponent,
                             resolution=ds.manifest.resolution,
                             dropout=config.dropout),
                  rng_seed=config.seed)
    params = model.parameters()
    state = AdamState(params)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence([config.seed & 0xFFFFFFFF, 0xEB0C]))

    meta = {"seed": str(config.seed), "iterations": str(config.iterations),
            "lr": f"{config.lr:.17g}", "batch_size": str(config.batch_size),
            "variant": ds.variant, "data": str(config.data)}
    for name, c in zip(("mask", "in_vx", "in_vy", "pressure", "vel_x", "vel_y"),
                       ds.norms):
        meta[f"norm_{name}"] = f"{float(c):.17g}"

    record = RunRecord(seed=config.seed)
    record_path = out_dir / "record.txt"
    best_val = math.inf
    batch = min(config.batch_size, len(x_train))
    order = np.empty(0, dtype=np.intp)
    cursor = 0

    for it in range(config.iterations):
        if cursor + batch > len(order):
            order = shuffle_rng.permutation(len(x_train))
            cursor = 0
        idx = order[cursor:cursor + batch]
        cursor += batch

        out = model.forward(ad.Tensor(x_train[idx]), training=True)
        loss = ad.l1_loss(out, y_train[idx])
        train_loss = float(loss.data)
        lr = lr_at(config, it)

        if not math.isfinite(train_loss):
            record.rows.append((it, train_loss, None, lr))
            record.diverged = True
            record.write(record_path)
            raise Diverged(f"training loss became {train_loss} at iteration {it}")

        for _, p in params:
            p.grad = None
        loss.backward()
        adam_step(params, {n: p.grad for n, p in params}, state,
                  lr, config.betas, config.eps)

        val_loss = None
        if len(x_val) and ((it + 1) % config.val_every == 0 or it == config.iterations - 1):
            val_loss = _mean_l1(model, x_val, y_val, config.batch_size)
            if val_loss < best_val:
                best_val = val_loss
                save_checkpoint(model, out_dir / "best.ckpt",
                                {**meta, "iteration": str(it), "val_loss": f"{val_loss:.9g}"})
                record.best_checkpoint = str(out_dir / "best.ckpt")
        record.rows.append((it, train_loss, val_loss, lr))

    save_checkpoint(model, out_dir / "final.ckpt", meta)
    record.final_checkpoint = str(out_dir / "final.ckpt")
    record.write(record_path)
    return record


@dataclass
class MultiSeedResult:
    mean: float
    sem: float
    finals: list[float]
    records: list[RunRecord]


def seed_stats(values: list[float]) -> tuple[float, float]:
    """Mean and standard error of the mean (sample std over sqrt n)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        raise ConfigInvalid("SEM needs at least two runs")
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


def multi_seed(config: TrainConfig, n_runs: int = 5,
               dataset: Dataset | None = None) -> MultiSeedResult:
    """n_runs independent trainings differing only by seed (base, base+1, ...).

    Aggregates the final validation loss; falls back to the final training
    loss when the dataset has no validation split.
    """
    if n_runs < 2:
        raise ConfigInvalid(f"multi_seed needs n_runs >= 2, got {n_runs}")
    ds = dataset if dataset is not None else Dataset(config.data)
    records = []
    finals = []
    for k in range(n_runs):
        run_cfg = replace(config, seed=config.seed + k,
                          out_dir=str(Path(config.out_dir) / f"seed{config.seed + k}"))
        rec = train(run_cfg, dataset=ds)
        records.append(rec)
        try:
            finals.append(rec.final_val_loss)
        except OutOfRange:
            finals.append(rec.final_train_loss)
    mean, sem = seed_stats(finals)
    return MultiSeedResult(mean=mean, sem=sem, finals=finals, records=records)
