"""Minimal reverse-mode autodiff over numpy arrays.

Just the ops a convolutional encoder-decoder needs: strided/padded
convolution, 2x bilinear upsampling, batch norm, (leaky) ReLU, dropout,
channel concatenation and an L1 loss. Forward ops record parent links
and a closure that scatters the incoming gradient; Tensor.backward()
runs one reverse topological sweep.

Production dtype is float32. Building the same graph from float64
arrays runs everything in float64, which is what the finite-difference
gradient checks use.
"""

from __future__ import annotations

import numpy as np

from .errors import NotScalar, ShapeMismatch

__all__ = [
    "Tensor",
    "conv2d",
    "upsample2x",
    "upsample2x_nearest",
    "batch_norm",
    "BNState",
    "leaky_relu",
    "relu",
    "dropout",
    "concat_channels",
    "l1_loss",
]

# im2col buffers are capped at ~64 MiB (f32) by chunking over the batch
_COL_BUDGET = 1 << 24
# patch matrices up to ~1 GiB (f32) are carried from forward to backward
_COL_CACHE = 1 << 28


class Tensor:
    """An array plus a gradient slot and the tape entry that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Seed a unit gradient and sweep the graph in reverse topo order."""
        if self.data.size != 1:
            raise NotScalar(f"backward() needs a scalar, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _accum(t: Tensor, g: np.ndarray, own: bool = False) -> None:
    """Add g into t.grad.

    own=True promises g is freshly allocated and unshared, so it can be
    adopted directly on first touch; views and borrowed buffers are
    copied to keep sibling gradients from aliasing each other.

    Leaves that opted out of gradients are skipped.
    """
    if not t.requires_grad and not t._parents:
        return
    if t.grad is None:
        if own and g.base is None and g.dtype == t.data.dtype:
            t.grad = g
        else:
            t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    out._parents = tuple(parents)
    out._backward = backward
    return out


def _pad_nchw(x: np.ndarray, pt: int, pb: int, pl: int, pr: int) -> np.ndarray:
    if not (pt or pb or pl or pr):
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + pt + pb, w + pl + pr), dtype=x.dtype)
    out[:, :, pt:pt + h, pl:pl + w] = x
    return out


def _gather_cols(xp: np.ndarray, k: int, stride: int, Ho: int, Wo: int) -> np.ndarray:
    """(n, C, Hp, Wp) -> (n, C*k*k, Ho*Wo) per-sample patch matrices.

    Each of the k*k block copies runs in source order (no transpose), and
    the sample-major layout keeps cols[i] a contiguous matrix so GEMMs can
    write straight into views of the output.
    """
    n, C = xp.shape[:2]
    cols = np.empty((n, C, k, k, Ho, Wo), dtype=xp.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride]
    return cols.reshape(n, C * k * k, Ho * Wo)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1,
           pad: tuple[int, int, int, int] = (0, 0, 0, 0)) -> Tensor:
    """Cross-correlation with per-output-channel bias.

    x: (N, Cin, H, W); w: (Cout, Cin, k, k); pad is (top, bottom, left,
    right). Output H' = floor((H + top + bottom - k)/stride) + 1.

    The forward patch matrix is kept alive for the backward pass (it is
    needed again for the kernel gradient) as long as it fits the cache
    budget; gradient w.r.t. the input goes through an equivalent conv of
    the output gradient with the flipped kernel when stride is 1, which
    is both cheaper to gather and free of overlapping scatter-adds.
    """
    N, Cin, H, W = x.data.shape
    Cout, Cw, kh, kw = w.data.shape
    if kh != kw:
        raise ShapeMismatch(f"square kernels only, got {kh}x{kw}")
    k = kh
    if Cw != Cin:
        raise ShapeMismatch(f"kernel expects {Cw} input channels, tensor has {Cin}")
    pt, pb, pl, pr = pad
    if H + pt + pb < k or W + pl + pr < k:
        raise ShapeMismatch(f"padded input smaller than kernel {k}")
    Ho = (H + pt + pb - k) // stride + 1
    Wo = (W + pl + pr - k) // stride + 1

    xp = _pad_nchw(x.data, pt, pb, pl, pr)
    ckk = Cin * k * k
    wmat = w.data.reshape(Cout, ckk)
    keep_cols = N * Ho * Wo * ckk <= _COL_CACHE
    chunk = N if keep_cols else max(1, _COL_BUDGET // max(1, Ho * Wo * ckk))

    y = np.empty((N, Cout, Ho, Wo), dtype=x.data.dtype)
    ymat = y.reshape(N, Cout, Ho * Wo)
    saved = None
    for i0 in range(0, N, chunk):
        i1 = min(N, i0 + chunk)
        cols = _gather_cols(xp[i0:i1], k, stride, Ho, Wo)
        np.matmul(wmat, cols, out=ymat[i0:i1])
        if keep_cols:
            saved = cols
    if b is not None:
        if b.data.shape != (Cout,):
            raise ShapeMismatch(f"bias shape {b.data.shape}, expected ({Cout},)")
        y += b.data[None, :, None, None]

    parents = (x, w) if b is None else (x, w, b)
    flip_ok = stride == 1 and min(k - 1 - pt, k - 1 - pb, k - 1 - pl, k - 1 - pr) >= 0
    holder = [saved]

    def backward(grad):
        need_dx = x.requires_grad or x._parents
        gmat = grad.reshape(N, Cout, Ho * Wo)
        cached = holder[0]
        holder[0] = None  # free the patch matrix as soon as dw is done
        dw = np.zeros(w.data.shape, dtype=w.data.dtype)
        dwmat = dw.reshape(Cout, ckk)
        if cached is not None:
            for i in range(N):
                dwmat += gmat[i] @ cached[i].T
            del cached
        else:
            for i0 in range(0, N, chunk):
                i1 = min(N, i0 + chunk)
                cols = _gather_cols(xp[i0:i1], k, stride, Ho, Wo)
                for i in range(i0, i1):
                    dwmat += gmat[i] @ cols[i - i0].T
                del cols
        _accum(w, dw, own=True)
        if b is not None:
            _accum(b, grad.sum(axis=(0, 2, 3)), own=True)
        if not need_dx:
            return

        if flip_ok:
            wflip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(Cin, Cout * k * k)
            dx = np.empty_like(x.data)
            dxmat = dx.reshape(N, Cin, H * W)
            gchunk = max(1, _COL_BUDGET // max(1, H * W * Cout * k * k))
            for i0 in range(0, N, gchunk):
                i1 = min(N, i0 + gchunk)
                gp = _pad_nchw(grad[i0:i1], k - 1 - pt, k - 1 - pb, k - 1 - pl, k - 1 - pr)
                gcols = _gather_cols(gp, k, 1, H, W)
                np.matmul(wflip, gcols, out=dxmat[i0:i1])
            _accum(x, dx, own=True)
        else:
            dxp = np.zeros_like(xp)
            for i in range(N):
                dcols = (wmat.T @ gmat[i]).reshape(Cin, k, k, Ho, Wo)
                for ki in range(k):
                    for kj in range(k):
                        dxp[i, :, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride] += \
                            dcols[:, ki, kj]
            if xp is x.data:
                _accum(x, dxp, own=True)
            else:
                _accum(x, dxp[:, :, pt:pt + H, pl:pl + W])

    return _result(y, parents, backward)


def _up1(x: np.ndarray) -> np.ndarray:
    """Double the last axis: scale-2 bilinear at half-cell offsets, edges clamped."""
    H = x.shape[-1]
    out = np.empty(x.shape[:-1] + (2 * H,), dtype=x.dtype)
    out[..., 0] = x[..., 0]
    out[..., 2 * H - 1] = x[..., H - 1]
    if H > 1:
        a, b = x[..., : H - 1], x[..., 1:]
        out[..., 2::2] = 0.25 * a + 0.75 * b
        out[..., 1 : 2 * H - 1 : 2] = 0.75 * a + 0.25 * b
    return out


def _up1_T(g: np.ndarray) -> np.ndarray:
    H = g.shape[-1] // 2
    d = np.zeros(g.shape[:-1] + (H,), dtype=g.dtype)
    d[..., 0] += g[..., 0]
    d[..., H - 1] += g[..., 2 * H - 1]
    if H > 1:
        ge = g[..., 2::2]
        go = g[..., 1 : 2 * H - 1 : 2]
        d[..., : H - 1] += 0.25 * ge + 0.75 * go
        d[..., 1:] += 0.75 * ge + 0.25 * go
    return d


def _up_rows(x: np.ndarray) -> np.ndarray:
    """_up1 on axis -2, written directly so both passes stream contiguous rows."""
    H = x.shape[-2]
    out = np.empty(x.shape[:-2] + (2 * H, x.shape[-1]), dtype=x.dtype)
    out[..., 0, :] = x[..., 0, :]
    out[..., 2 * H - 1, :] = x[..., H - 1, :]
    if H > 1:
        a, b = x[..., : H - 1, :], x[..., 1:, :]
        out[..., 2::2, :] = 0.25 * a + 0.75 * b
        out[..., 1 : 2 * H - 1 : 2, :] = 0.75 * a + 0.25 * b
    return out


def _up_rows_T(g: np.ndarray) -> np.ndarray:
    H = g.shape[-2] // 2
    d = np.zeros(g.shape[:-2] + (H, g.shape[-1]), dtype=g.dtype)
    d[..., 0, :] += g[..., 0, :]
    d[..., H - 1, :] += g[..., 2 * H - 1, :]
    if H > 1:
        ge = g[..., 2::2, :]
        go = g[..., 1 : 2 * H - 1 : 2, :]
        d[..., : H - 1, :] += 0.25 * ge + 0.75 * go
        d[..., 1:, :] += 0.75 * ge + 0.25 * go
    return d


def upsample2x(x: Tensor) -> Tensor:
    """(..., H, W) -> (..., 2H, 2W) bilinear; gradient is the exact transpose."""
    y = _up1(_up_rows(x.data))

    def backward(grad):
        _accum(x, _up_rows_T(_up1_T(grad)), own=True)

    return _result(y, (x,), backward)


def upsample2x_nearest(x: Tensor) -> Tensor:
    """Nearest-neighbor doubling; kept as a configuration escape hatch."""
    y = np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1)

    def backward(grad):
        g = grad.reshape(grad.shape[:-2] + (grad.shape[-2] // 2, 2, grad.shape[-1] // 2, 2))
        _accum(x, g.sum(axis=(-3, -1)))

    return _result(y, (x,), backward)


class BNState:
    """Running statistics owned by a batch-norm layer (not differentiated)."""

    __slots__ = ("mean", "var")

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BNState,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over (N, H, W).

    Train mode normalizes with biased batch statistics and folds them
    into the running averages; eval mode uses the running values.
    """
    N, C, H, W = x.data.shape
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise ShapeMismatch(f"gamma/beta must be ({C},)")
    g = gamma.data[None, :, None, None]

    if training:
        m = N * H * W
        if m < 2:
            raise ShapeMismatch("batch norm needs at least 2 values per channel")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
        state.mean[:] = (1.0 - momentum) * state.mean + momentum * mu
        state.var[:] = (1.0 - momentum) * state.var + momentum * var
        y = g * xhat + beta.data[None, :, None, None]

        def backward(grad):
            dxhat = grad * g
            s1 = dxhat.sum(axis=(0, 2, 3))
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3))
            dx = (inv[None, :, None, None] / m) * (
                m * dxhat - s1[None, :, None, None] - xhat * s2[None, :, None, None]
            )
            _accum(x, dx.astype(x.data.dtype, copy=False), own=True)
            _accum(gamma, (grad * xhat).sum(axis=(0, 2, 3)), own=True)
            _accum(beta, grad.sum(axis=(0, 2, 3)), own=True)

    else:
        inv = 1.0 / np.sqrt(state.var + eps)
        xhat = (x.data - state.mean[None, :, None, None]) * inv[None, :, None, None]
        y = g * xhat + beta.data[None, :, None, None]

        def backward(grad):
            _accum(x, (grad * g * inv[None, :, None, None]).astype(x.data.dtype, copy=False), own=True)
            _accum(gamma, (grad * xhat).sum(axis=(0, 2, 3)), own=True)
            _accum(beta, grad.sum(axis=(0, 2, 3)), own=True)

    return _result(y.astype(x.data.dtype, copy=False), (x, gamma, beta), backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    one = x.data.dtype.type(1.0)
    mult = np.where(x.data > 0, one, x.data.dtype.type(slope))
    y = x.data * mult

    def backward(grad):
        _accum(x, grad * mult, own=True)

    return _result(y, (x,), backward)


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Zero with probability rate and rescale survivors; identity in eval.

    The mask drawn here is captured by the backward closure, so the
    gradient sees exactly the forward mask.
    """
    if not 0.0 <= rate < 1.0:
        raise ShapeMismatch(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        def backward_id(grad):
            _accum(x, grad)
        return _result(x.data, (x,), backward_id)

    if x.data.dtype == np.float32:
        keep = rng.random(x.data.shape, dtype=np.float32)
    else:
        keep = rng.random(x.data.shape)
    np.greater_equal(keep, rate, out=keep, casting="unsafe")
    keep *= 1.0 / (1.0 - rate)
    y = x.data * keep

    def backward(grad):
        _accum(x, grad * keep, own=True)

    return _result(y, (x,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ShapeMismatch(f"cannot concat {a.data.shape} with {b.data.shape}")
    ca = a.data.shape[1]
    y = np.concatenate([a.data, b.data], axis=1)

    def backward(grad):
        _accum(a, grad[:, :ca])
        _accum(b, grad[:, ca:])

    return _result(y, (a, b), backward)


def l1_loss(out: Tensor, target) -> Tensor:
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=out.data.dtype)
    if tgt.shape != out.data.shape:
        raise ShapeMismatch(f"loss shapes differ: {out.data.shape} vs {tgt.shape}")
    diff = out.data - tgt
    y = np.abs(diff).mean(dtype=out.data.dtype)

    def backward(grad):
        _accum(out, grad * np.sign(diff) / diff.size, own=True)

    return _result(np.asarray(y), (out,), backward)
