"""Dense tensors with reverse-mode automatic differentiation.

The engine records operations on an explicit :class:`Tape`. Entering a tape
makes it active; every op executed while a tape is active and touching at
least one ``requires_grad`` tensor appends a node (inputs, output, backward
rule) in execution order, which is automatically a topological order.
:func:`backward` walks the nodes once, in reverse recording order.

Outside a tape, ops are plain numpy computations (the eval path). Arithmetic
is carried out in whatever dtype the operands hold; tests use float64,
training may use float32.
"""

from __future__ import annotations

import os
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.linalg import blas as _blas

from .errors import (
    ConfigError,
    ContractError,
    DegenerateBatchError,
    EvaluationError,
    InvalidMaskError,
    ShapeMismatchError,
)

DEFAULT_DTYPE = np.float64

_FINITE_CHECKS = os.environ.get("SIGNSPOT_CHECK_FINITE", "") not in ("", "0")


def set_finite_checks(enabled: bool) -> None:
    """Enable the debug guard that rejects NaN/Inf after every forward op."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = enabled


class Tensor:
    """A dense n-dimensional array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    # -- introspection ----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.size if axis is None else _axis_count(self.shape, axis)
        return tensor_sum(self, axis=axis, keepdims=keepdims) * (1.0 / n)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)


def _axis_count(shape: tuple[int, ...], axis) -> int:
    if isinstance(axis, int):
        return shape[axis]
    n = 1
    for a in axis:
        n *= shape[a]
    return n


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DEFAULT_DTYPE))


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


class TapeNode:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs: tuple[Tensor, ...], output: Tensor, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of differentiable operations for one backward pass."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.pop()

    def reset(self) -> None:
        self.nodes.clear()


_TAPES: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _apply(name: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result, recording it on the active tape when needed."""
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise EvaluationError(f"non-finite values produced by {name}")
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(TapeNode(tuple(inputs), out, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    ``loss`` must be a scalar recorded on the active tape. Leaves are tensors
    that are not the output of a recorded op (parameters, inputs); taped
    intermediates carry their gradients only transiently. Repeated calls
    without ``zero_grad`` accumulate into existing gradients.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = active_tape()
    if tape is None:
        raise ContractError("backward called with no active tape")
    produced = {id(node.output) for node in tape.nodes}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owners: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        input_grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, input_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                owners[key] = t
    for key, g in grads.items():
        t = owners[key]
        if t.requires_grad and key not in produced:
            t.accumulate_grad(g)


# ---------------------------------------------------------------------------
# Broadcast helpers
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _apply("add", data, (a, b), bwd)


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)) and not isinstance(b, bool):
        a = _as_tensor(a)
        s = float(b)
        return _apply("scale", a.data * s, (a,), lambda g: (g * s,))
    if isinstance(a, (int, float)) and not isinstance(a, bool):
        return mul(b, a)
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _apply("mul", ad * bd, (a, b), bwd)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _apply("neg", -a.data, (a,), lambda g: (-g,))


def div(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        return mul(a, 1.0 / float(b))
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    data = ad / bd

    def bwd(g):
        ga = _unbroadcast(g / bd, a.shape)
        gb = _unbroadcast(-g * ad / (bd * bd), b.shape)
        return ga, gb

    return _apply("div", data, (a, b), bwd)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _apply("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    with np.errstate(invalid="ignore", divide="ignore"):
        data = np.log(ad)
    return _apply("log", data, (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return _apply("sqrt", out, (a,), lambda g: (g * (0.5 / out),))


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    return _apply("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _apply(
        "transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),)
    )


def getitem(a: Tensor, key) -> Tensor:
    """Basic (slice / integer) indexing with gradient scatter."""
    a = _as_tensor(a)
    data = a.data[key]
    if isinstance(data, np.ndarray):
        data = data.copy()
    shape = a.shape
    dtype = a.data.dtype

    def bwd(g):
        gx = np.zeros(shape, dtype=dtype)
        gx[key] += g
        return (gx,)

    return _apply("getitem", data, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _apply("concat", data, tuple(parts), bwd)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(a.data.dtype, copy=True),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, shape).astype(a.data.dtype, copy=True),)

    return _apply("sum", data, (a,), bwd)


def amax(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; gradient flows to the first argmax per slice."""
    a = _as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    out = data if keepdims else np.squeeze(data, axis=axis)
    shape, dtype = a.shape, a.data.dtype

    def bwd(g):
        gx = np.zeros(shape, dtype=dtype)
        g2 = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gx, np.expand_dims(idx, axis), g2, axis=axis)
        return (gx,)

    return _apply("amax", out, (a,), bwd)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(np.log(s) + m, axis=axis)
    soft = e / s

    def bwd(g):
        return (np.expand_dims(g, axis) * soft,)

    return _apply("logsumexp", out, (a,), bwd)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    return _apply("relu", np.maximum(ad, 0.0), (a,), lambda g: (g * (ad > 0),))


def sigmoid(a) -> Tensor:
    """Numerically stable logistic function."""
    a = _as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _apply("sigmoid", out, (a,), bwd)


# ---------------------------------------------------------------------------
# Matrix multiply
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(f"matmul needs 2d+ operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    data = ad @ bd

    def bwd(g):
        ga = _unbroadcast(g @ bd.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return _apply("matmul", data, (a, b), bwd)


def _gemm_acc(a2: np.ndarray, b2: np.ndarray, c2: np.ndarray) -> None:
    """c2 += a2 @ b2 in place. All three must be C-contiguous 2d arrays."""
    fn = _blas.dgemm if a2.dtype == np.float64 else _blas.sgemm
    # Row-major C = A@B is column-major C^T = B^T A^T; the .T views are
    # Fortran-contiguous so no copies happen inside BLAS.
    fn(1.0, b2.T, a2.T, 1.0, c=c2.T, overwrite_c=True)


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of ``x`` (B,Cin,H,W) with ``w`` (Cout,Cin,kh,kw).

    Zero padding, integer strides. Internally the work runs channels-last as
    one GEMM per kernel tap, accumulated in place, which is the fastest
    arrangement found for skinny pose grids on a single core.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatchError(f"conv2d needs 4d operands, got {x.shape} and {w.shape}")
    B, Cin, H, W = x.shape
    Cout, Cw, kh, kw = w.shape
    if Cw != Cin:
        raise ShapeMismatchError(f"conv2d channel mismatch: input {x.shape}, kernel {w.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    if kh > H + 2 * ph or kw > W + 2 * pw or Ho < 1 or Wo < 1:
        raise ConfigError(
            f"conv2d produces an empty output: input {H}x{W}, kernel {kh}x{kw}, "
            f"pad {ph}x{pw}, stride {sh}x{sw}"
        )
    dtype = x.data.dtype
    xp = np.zeros((B, H + 2 * ph, W + 2 * pw, Cin), dtype=dtype)
    xp[:, ph:ph + H, pw:pw + W] = x.data.transpose(0, 2, 3, 1)
    wt = np.ascontiguousarray(w.data.transpose(2, 3, 1, 0))  # (kh,kw,Cin,Cout)

    M = B * Ho * Wo
    y = np.zeros((M, Cout), dtype=dtype)
    buf = np.empty((B, Ho, Wo, Cin), dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            np.copyto(buf, xp[:, i:i + sh * Ho:sh, j:j + sw * Wo:sw, :])
            _gemm_acc(buf.reshape(M, Cin), wt[i, j], y)
    out = y.reshape(B, Ho, Wo, Cout)
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    need_dx = x.requires_grad

    def bwd(g):
        dy = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(M, Cout)
        dwt = np.empty_like(wt)
        dxp = np.zeros_like(xp) if need_dx else None
        dxs = np.empty((M, Cin), dtype=dtype) if need_dx else None
        for i in range(kh):
            for j in range(kw):
                np.copyto(buf, xp[:, i:i + sh * Ho:sh, j:j + sw * Wo:sw, :])
                np.matmul(buf.reshape(M, Cin).T, dy, out=dwt[i, j])
                if need_dx:
                    np.matmul(dy, wt[i, j].T, out=dxs)
                    dxp[:, i:i + sh * Ho:sh, j:j + sw * Wo:sw, :] += dxs.reshape(B, Ho, Wo, Cin)
        dx = None
        if need_dx:
            dx = np.ascontiguousarray(
                dxp[:, ph:ph + H, pw:pw + W].transpose(0, 3, 1, 2)
            )
        dw = np.ascontiguousarray(dwt.transpose(3, 2, 0, 1))
        if bias is None:
            return dx, dw
        return dx, dw, dy.sum(axis=0)

    inputs = (x, w) if bias is None else (x, w, bias)
    return _apply("conv2d", out, inputs, bwd)


# ---------------------------------------------------------------------------
# Normalization layers
# ---------------------------------------------------------------------------


class BatchNormState:
    """Running statistics for one batch-norm layer (not differentiated)."""

    __slots__ = ("running_mean", "running_var")

    def __init__(self, channels: int, dtype=DEFAULT_DTYPE):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def copy(self) -> "BatchNormState":
        s = BatchNormState(len(self.running_mean), dtype=self.running_mean.dtype)
        s.running_mean[:] = self.running_mean
        s.running_var[:] = self.running_var
        return s


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    mode: str = "train",
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Per-channel normalization of (B,C,H,W) activations.

    Train mode normalizes by batch statistics and updates the running stats
    (unbiased variance, torch convention); eval mode uses the running stats.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    B, C, H, W = x.shape
    n = B * H * W
    xd = x.data
    flat = xd.reshape(B, C, H * W)
    if mode == "train":
        if n < 2:
            raise DegenerateBatchError(
                f"batch_norm2d needs B*H*W >= 2 in train mode, got {n}"
            )
        s = flat.sum(axis=2).sum(axis=0)
        ss = np.einsum("bcx,bcx->c", flat, flat)
        mean = s / n
        var = np.maximum(ss / n - mean * mean, 0.0)
        state.running_mean += momentum * (mean - state.running_mean)
        unbiased = var * (n / (n - 1))
        state.running_var += momentum * (unbiased - state.running_var)
    elif mode == "eval":
        mean = state.running_mean
        var = state.running_var
    else:
        raise ConfigError(f"batch_norm2d mode must be train or eval, got {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    if mode == "eval":

        def bwd_eval(g):
            scale = (gamma.data * inv_std)[None, :, None, None]
            gflat = g.reshape(B, C, H * W)
            dgamma = np.einsum("bcx,bcx->c", gflat, xhat.reshape(B, C, H * W))
            dbeta = gflat.sum(axis=2).sum(axis=0)
            return g * scale, dgamma, dbeta

        return _apply("batch_norm2d", out, (x, gamma, beta), bwd_eval)

    def bwd_train(g):
        gflat = g.reshape(B, C, H * W)
        xhat_flat = xhat.reshape(B, C, H * W)
        dbeta = gflat.sum(axis=2).sum(axis=0)
        dgamma = np.einsum("bcx,bcx->c", gflat, xhat_flat)
        # dx through the batch statistics
        gxh = g * gamma.data[None, :, None, None]
        mean_g = gxh.reshape(B, C, H * W).sum(axis=2).sum(axis=0) / n
        mean_gx = np.einsum(
            "bcx,bcx->c", gxh.reshape(B, C, H * W), xhat_flat
        ) / n
        dx = inv_std[None, :, None, None] * (
            gxh - mean_g[None, :, None, None] - xhat * mean_gx[None, :, None, None]
        )
        return dx, dgamma, dbeta

    return _apply("batch_norm2d", out, (x, gamma, beta), bwd_train)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    xd = x.data
    d = xd.shape[-1]
    mean = xd.mean(axis=-1, keepdims=True)
    centred = xd - mean
    var = np.mean(centred * centred, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv_std
    out = xhat * gamma.data + beta.data
    lead_axes = tuple(range(xd.ndim - 1))

    def bwd(g):
        dgamma = (g * xhat).sum(axis=lead_axes)
        dbeta = g.sum(axis=lead_axes)
        gxh = g * gamma.data
        mean_g = gxh.mean(axis=-1, keepdims=True)
        mean_gx = (gxh * xhat).mean(axis=-1, keepdims=True)
        dx = inv_std * (gxh - mean_g - xhat * mean_gx)
        return dx, dgamma, dbeta

    return _apply("layer_norm", out, (x, gamma, beta), bwd)


def masked_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis with hard-masked positions.

    ``mask`` is boolean, True where a position may receive probability; it
    broadcasts against ``scores``. Masked positions come out exactly 0.
    """
    scores = _as_tensor(scores)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise InvalidMaskError("masked_softmax saw a fully-masked row")
    sd = scores.data
    neg = np.finfo(sd.dtype).min
    masked_scores = np.where(mask, sd, neg)
    m = masked_scores.max(axis=-1, keepdims=True)
    e = np.exp(masked_scores - m)
    e = np.where(np.broadcast_to(mask, e.shape), e, 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    out = e / denom

    def bwd(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _apply("masked_softmax", out, (scores,), bwd)


# ---------------------------------------------------------------------------
# Pooling, embeddings, dropout
# ---------------------------------------------------------------------------


def adaptive_avg_pool2d(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    """Average (B,C,H,W) into (B,C,h,w) bins with floor(i*H/h) edges."""
    x = _as_tensor(x)
    B, C, H, W = x.shape
    h, w = out_hw
    if h > H or w > W:
        raise ConfigError(f"pool output {h}x{w} exceeds input {H}x{W}")
    xd = x.data
    out = np.empty((B, C, h, w), dtype=xd.dtype)
    bins = []
    for i in range(h):
        h0, h1 = (i * H) // h, ((i + 1) * H) // h
        for j in range(w):
            w0, w1 = (j * W) // w, ((j + 1) * W) // w
            out[:, :, i, j] = xd[:, :, h0:h1, w0:w1].mean(axis=(2, 3))
            bins.append((i, j, h0, h1, w0, w1))

    def bwd(g):
        gx = np.zeros((B, C, H, W), dtype=xd.dtype)
        for i, j, h0, h1, w0, w1 in bins:
            gx[:, :, h0:h1, w0:w1] += (
                g[:, :, i, j] / ((h1 - h0) * (w1 - w0))
            )[:, :, None, None]
        return (gx,)

    return _apply("adaptive_avg_pool2d", out, (x,), bwd)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` (V,d); gradients scatter-add back."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    V = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        bad = ids[(ids < 0) | (ids >= V)].flat[0]
        raise IndexError(f"embedding id {bad} out of range [0, {V})")
    data = table.data[ids]
    shape, dtype = table.shape, table.data.dtype

    def bwd(g):
        gt = np.zeros(shape, dtype=dtype)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (gt,)

    return _apply("embedding_lookup", data, (table,), bwd)


def dropout(x: Tensor, p: float, mode: str = "train", rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {p}")
    x = _as_tensor(x)
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("train-mode dropout needs an rng")
    keep = rng.random(x.shape) >= p
    scale = 1.0 / (1.0 - p)
    factor = keep * np.asarray(scale, dtype=x.data.dtype)

    def bwd(g):
        return (g * factor,)

    return _apply("dropout", x.data * factor, (x,), bwd)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy on raw logits, computed in stable form."""
    logits = _as_tensor(logits)
    y = np.asarray(labels, dtype=logits.data.dtype)
    z = logits.data
    if z.size == 0:
        raise DegenerateBatchError("bce_with_logits on an empty batch")
    if z.shape != y.shape:
        raise ShapeMismatchError(f"logits {z.shape} vs labels {y.shape}")
    # max(z,0) - z*y + log(1 + exp(-|z|))
    with np.errstate(invalid="ignore"):
        per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    data = np.asarray(per.mean(), dtype=z.dtype)
    n = z.size

    def bwd(g):
        with np.errstate(over="ignore"):
            sig = np.empty_like(z)
            pos = z >= 0
            sig[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
            ez = np.exp(z[~pos])
            sig[~pos] = ez / (1.0 + ez)
        return ((sig - y) * (g / n),)

    return _apply("bce_with_logits", data, (logits,), bwd)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def gradient_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be scalar-valued and must not mutate ``x``. The relative error
    per coordinate is |analytic - numeric| / max(1, |numeric|).
    """
    x.requires_grad = True
    x.zero_grad()
    with Tape():
        y = f(x)
        if y.size != 1:
            raise ContractError(f"gradient_check needs a scalar function, got {y.shape}")
        if not np.all(np.isfinite(y.data)):
            raise EvaluationError("gradient_check: f(x) is not finite")
        backward(y)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        y1 = float(f(x).data)
        flat[i] = orig - h
        y2 = float(f(x).data)
        flat[i] = orig
        numeric[i] = (y1 - y2) / (2.0 * h)
    if not np.all(np.isfinite(numeric)):
        raise EvaluationError("gradient_check: non-finite finite-difference values")
    num = numeric.reshape(x.data.shape)
    denom = np.maximum(1.0, np.abs(num))
    return float(np.max(np.abs(analytic - num) / denom))
