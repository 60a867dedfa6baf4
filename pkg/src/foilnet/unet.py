"""The 14-block fully convolutional encoder-decoder.

Encoder halves 128 -> 1 over seven strided convolutions with channel
widths (1,2,2,4,8,8,8) * 2^c; the decoder mirrors back up, each block
upsampling 2x then applying a size-preserving convolution, fed by skip
concatenations from the matching encoder depth. Blocks are
pre-activation (activation, convolution, batch norm, dropout) with
leaky ReLU 0.2 down and ReLU up; no batch norm on the first and last
blocks and no activation after the final 3-channel convolution.

Smaller power-of-two resolutions build the same structure truncated in
depth, which is what the fast gradient-check probes use.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigInvalid, DatasetMissing, ShapeMismatch

__all__ = [
    "UNetConfig",
    "UNet",
    "build",
    "count_parameters",
    "save_checkpoint",
    "load_checkpoint",
]

_FACTORS = (1, 2, 2, 4, 8, 8, 8)
_KERNELS = (4, 4, 4, 4, 2, 2, 2)
_IN_CHANNELS = 3
_OUT_CHANNELS = 3


@dataclass(frozen=True)
class UNetConfig:
    channel_exponent: int = 5
    resolution: int = 128
    dropout: float = 0.01
    upsample: str = "bilinear"

    def __post_init__(self):
        if not 1 <= self.channel_exponent <= 8:
            raise ConfigInvalid(f"channel_exponent {self.channel_exponent} outside [1, 8]")
        if self.resolution not in (8, 16, 32, 64, 128):
            raise ConfigInvalid(f"resolution {self.resolution} not a supported power of two")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigInvalid(f"dropout {self.dropout} outside [0, 1)")
        if self.upsample not in ("bilinear", "nearest"):
            raise ConfigInvalid(f"unknown upsample mode {self.upsample!r}")

    @property
    def depth(self) -> int:
        return int(self.resolution).bit_length() - 1


class _Block:
    __slots__ = ("w", "b", "gamma", "beta", "state", "kernel", "pad", "pre_act", "skip_from")

    def __init__(self, w, b, gamma=None, beta=None, state=None, kernel=4,
                 pad=(0, 0, 0, 0), pre_act=None, skip_from=None):
        self.w, self.b = w, b
        self.gamma, self.beta, self.state = gamma, beta, state
        self.kernel, self.pad = kernel, pad
        self.pre_act = pre_act          # None | "leaky" | "relu"
        self.skip_from = skip_from      # encoder block index concatenated in


class UNet:
    """Built network: ordered parameters, batch-norm states, block plan."""

    def __init__(self, config: UNetConfig, seed: int, dtype=np.float32):
        self.config = config
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.enc: list[_Block] = []
        self.dec: list[_Block] = []
        self._names: dict[str, ad.Tensor] = {}
        self._rng = np.random.default_rng(np.random.SeedSequence(self.seed))
        init = np.random.default_rng(np.random.SeedSequence([self.seed, 0xF01]))

        d = config.depth
        u = 2 ** config.channel_exponent
        factors = _FACTORS[:d]
        kernels = _KERNELS[:d]

        def conv(tag, cin, cout, k):
            bound = 1.0 / np.sqrt(cin * k * k)
            w = ad.Tensor(init.uniform(-bound, bound, size=(cout, cin, k, k)).astype(self.dtype),
                          requires_grad=True)
            b = ad.Tensor(init.uniform(-bound, bound, size=cout).astype(self.dtype),
                          requires_grad=True)
            self._names[f"{tag}.w"] = w
            self._names[f"{tag}.b"] = b
            return w, b

        def norm(tag, c):
            gamma = ad.Tensor(np.ones(c, dtype=self.dtype), requires_grad=True)
            beta = ad.Tensor(np.zeros(c, dtype=self.dtype), requires_grad=True)
            self._names[f"{tag}.gamma"] = gamma
            self._names[f"{tag}.beta"] = beta
            return gamma, beta, ad.BNState(c, dtype=self.dtype)

        size = config.resolution
        ch = _IN_CHANNELS
        for i in range(d):
            k = kernels[i]
            cout = factors[i] * u
            tag = f"enc{i + 1}"
            w, b = conv(tag, ch, cout, k)
            blk = _Block(w, b, kernel=k, pad=(1, 1, 1, 1) if k == 4 else (0, 0, 0, 0),
                         pre_act=None if i == 0 else "leaky")
            if i > 0:
                blk.gamma, blk.beta, blk.state = norm(tag, cout)
            self.enc.append(blk)
            size //= 2
            ch = cout
        if size != 1:
            raise ConfigInvalid("encoder does not reach a 1x1 bottleneck")

        for j in range(d):
            k = kernels[d - 1 - j]
            last = j == d - 1
            skip = None if j == 0 else d - 1 - j
            cin = ch if j == 0 else ch + factors[d - 1 - j] * u
            cout = _OUT_CHANNELS if last else factors[d - 2 - j] * u
            tag = f"dec{j + 1}"
            w, b = conv(tag, cin, cout, k)
            blk = _Block(w, b, kernel=k, pad=(2, 1, 2, 1) if k == 4 else (1, 0, 1, 0),
                         pre_act="relu", skip_from=skip)
            if not last:
                blk.gamma, blk.beta, blk.state = norm(tag, cout)
            self.dec.append(blk)
            ch = cout
            size *= 2
        if size != config.resolution:
            raise ConfigInvalid("decoder does not return to the input resolution")

    def parameters(self) -> list[tuple[str, ad.Tensor]]:
        return list(self._names.items())

    def count_parameters(self) -> int:
        return count_parameters(self)

    def running_stats(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for prefix, blocks in (("enc", self.enc), ("dec", self.dec)):
            for i, blk in enumerate(blocks):
                if blk.state is not None:
                    out.append((f"{prefix}{i + 1}.running_mean", blk.state.mean))
                    out.append((f"{prefix}{i + 1}.running_var", blk.state.var))
        return out

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> ad.Tensor:
        if not isinstance(x, ad.Tensor):
            x = ad.Tensor(np.asarray(x, dtype=self.dtype))
        n = x.data.shape[0] if x.data.ndim == 4 else None
        want = (n, _IN_CHANNELS, self.config.resolution, self.config.resolution)
        if x.data.ndim != 4 or x.data.shape != want:
            raise ShapeMismatch(f"input shape {x.data.shape}, expected (N, {want[1]}, {want[2]}, {want[3]})")
        if rng is None:
            rng = self._rng
        rate = self.config.dropout
        up = ad.upsample2x if self.config.upsample == "bilinear" else ad.upsample2x_nearest

        h = x
        enc_outs = []
        for blk in self.enc:
            if blk.pre_act == "leaky":
                h = ad.leaky_relu(h, 0.2)
            h = ad.conv2d(h, blk.w, blk.b, stride=2, pad=blk.pad)
            if blk.state is not None:
                h = ad.batch_norm(h, blk.gamma, blk.beta, blk.state, training)
            h = ad.dropout(h, rate, training, rng)
            enc_outs.append(h)
        for blk in self.dec:
            if blk.skip_from is not None:
                h = ad.concat_channels(h, enc_outs[blk.skip_from])
            h = up(h)
            h = ad.relu(h)
            h = ad.conv2d(h, blk.w, blk.b, stride=1, pad=blk.pad)
            if blk.state is not None:
                h = ad.batch_norm(h, blk.gamma, blk.beta, blk.state, training)
            h = ad.dropout(h, rate, training, rng)
        return h


def build(config: UNetConfig, rng_seed: int = 0, dtype=np.float32) -> UNet:
    return UNet(config, rng_seed, dtype=dtype)


def count_parameters(model) -> int:
    """Elements of all trainable tensors; running stats excluded."""
    return int(sum(t.data.size for _, t in model.parameters()))


def save_checkpoint(model: UNet, path: str | os.PathLike, meta: dict | None = None) -> None:
    """Text manifest at `path`, f32 little-endian blob at `path`.bin."""
    path = os.fspath(path)
    entries = [(name, t.data) for name, t in model.parameters()]
    entries += model.running_stats()

    blob = io.BytesIO()
    lines = [
        "format foilnet-checkpoint 1",
        f"channel_exponent {model.config.channel_exponent}",
        f"resolution {model.config.resolution}",
        f"dropout {model.config.dropout!r}",
        f"upsample {model.config.upsample}",
        f"seed {model.seed}",
    ]
    for key in sorted(meta or {}):
        lines.append(f"meta.{key} {(meta or {})[key]}")
    lines.append(f"tensors {len(entries)}")
    offset = 0
    for name, arr in entries:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        blob.write(raw)
        shape = ",".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"tensor {name} {shape} {offset} {len(raw)}")
        offset += len(raw)

    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(path + ".bin", "wb") as fh:
        fh.write(blob.getvalue())


def load_checkpoint(path: str | os.PathLike, dtype=np.float32) -> tuple[UNet, dict]:
    """Rebuild a model from a manifest + blob pair written by save_checkpoint."""
    path = os.fspath(path)
    try:
        with open(path) as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
        with open(path + ".bin", "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise DatasetMissing(f"cannot read checkpoint {path}: {e}") from None
    if not lines or not lines[0].startswith("format foilnet-checkpoint"):
        raise ConfigInvalid(f"{path}: not a checkpoint manifest")

    header: dict[str, str] = {}
    meta: dict[str, str] = {}
    table = []
    for ln in lines[1:]:
        kind, _, rest = ln.partition(" ")
        if kind == "tensor":
            name, shape_s, off_s, nbytes_s = rest.split()
            shape = () if shape_s == "scalar" else tuple(int(s) for s in shape_s.split(","))
            table.append((name, shape, int(off_s), int(nbytes_s)))
        elif kind.startswith("meta."):
            meta[kind[5:]] = rest
        else:
            header[kind] = rest

    config = UNetConfig(
        channel_exponent=int(header["channel_exponent"]),
        resolution=int(header["resolution"]),
        dropout=float(header["dropout"]),
        upsample=header.get("upsample", "bilinear"),
    )
    model = build(config, rng_seed=int(header.get("seed", "0")), dtype=dtype)

    slots = dict(model.parameters())
    stats = dict(model.running_stats())
    for name, shape, off, nbytes in table:
        arr = np.frombuffer(raw, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape)
        if name in slots:
            if slots[name].data.shape != shape:
                raise ShapeMismatch(f"{path}: tensor {name} has shape {shape}, model expects {slots[name].data.shape}")
            slots[name].data = arr.astype(model.dtype)
        elif name in stats:
            stats[name][:] = arr.astype(model.dtype)
        else:
            raise ConfigInvalid(f"{path}: unknown tensor {name}")
    return model, meta
