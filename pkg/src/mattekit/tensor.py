"""Dense n-d tensors with a reverse-mode differentiation tape.

Arrays are numpy-backed (row-major, float32 by default, float64 on request).
Gradient recording is explicit: ops append to the currently active ``Tape``,
and ``Tape.backward`` replays the records in reverse execution order, which
is always a valid reverse topological order. Outside a tape, ops run plain.

Every op checks its output for NaN/Inf and raises ``NonFiniteError`` instead
of letting poison values propagate; disable via ``set_finite_checks(False)``
for throughput experiments.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

DEFAULT_DTYPE = np.float32

_SUPPORTED_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf."""


class TapeError(RuntimeError):
    """Tape misuse: nested activation, double backward, non-scalar loss."""


_finite_checks = True


def set_finite_checks(enabled):
    """Toggle the per-op NaN/Inf output check. Returns the previous setting."""
    global _finite_checks
    prev = _finite_checks
    _finite_checks = bool(enabled)
    return prev


def _check_finite(arr, opname):
    if not _finite_checks:
        return
    # One fast float64 pass; a NaN/Inf input forces a non-finite sum. The
    # full scan only runs to rule out a (benign) overflow of the sum itself.
    if not math.isfinite(float(np.sum(arr, dtype=np.float64))):
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"{opname}: output contains NaN or Inf")


class Tensor:
    """A dense real array plus autodiff bookkeeping.

    ``data`` is always a contiguous numpy array of float32 or float64.
    Tensors are immutable by convention once created; only optimizer
    updates touch ``data`` in place.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            arr = arr.astype(DEFAULT_DTYPE if dtype is None else dtype)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}{flag})"

    # Arithmetic sugar; scalars are folded into the op closures directly.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a primitive; use mul + exp/log")
        return mul(self, 1.0 / float(other))


def _scalar_err(t):
    raise ShapeError(f"item() needs a single element tensor, got shape {tuple(t.shape)}")


def astensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x), dtype=dtype)


# ---------------------------------------------------------------------------
# Tape


@dataclass
class _Node:
    out: Tensor
    inputs: tuple
    backward: object  # callable(grad_out) -> tuple of grads aligned with inputs


class Tape:
    """Ordered record of executed primitives for one backward pass.

    Use as a context manager around the forward computation. Execution
    order is recorded, so replaying in reverse visits every node after all
    of its consumers: exact reverse topological order. Ops recorded on the
    tape but not feeding the loss simply never receive an output gradient,
    so their inputs' gradients stay zero.
    """

    def __init__(self):
        self._nodes = []
        self._consumed = False

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack.pop()
        assert popped is self
        return False

    def _push(self, out, inputs, backward_fn):
        self._nodes.append(_Node(out, inputs, backward_fn))

    def backward(self, loss):
        """Populate ``.grad`` on every recorded tensor reachable from ``loss``."""
        if self._consumed:
            raise TapeError("backward() already ran on this tape; build a fresh tape")
        if not isinstance(loss, Tensor) or loss.size != 1:
            raise TapeError("loss must be a scalar (single element) Tensor")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None:
                    continue
                if inp.grad is None:
                    inp.grad = gi.astype(inp.data.dtype, copy=False)
                else:
                    inp.grad = inp.grad + gi


_tape_stack = []


def _active_tape():
    return _tape_stack[-1] if _tape_stack else None


def backward(tape, loss):
    """Run the reverse pass of ``tape`` from scalar ``loss``."""
    tape.backward(loss)


def _record(out, inputs, backward_fn):
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._push(out, inputs, backward_fn)
    return out


def _same_dtype(*tensors):
    dts = {t.data.dtype for t in tensors}
    if len(dts) > 1:
        raise ShapeError(f"mixed dtypes in op: {sorted(d.name for d in dts)}")


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise arithmetic


def add(a, b):
    if not isinstance(b, Tensor) and not isinstance(a, Tensor):
        raise TypeError("add needs at least one Tensor")
    if not isinstance(b, Tensor):
        a = astensor(a)
        out = Tensor(a.data + float(b))
        _check_finite(out.data, "add")
        return _record(out, (a,), lambda g: (g,))
    if not isinstance(a, Tensor):
        return add(b, a)
    _same_dtype(a, b)
    out = Tensor(a.data + b.data)
    _check_finite(out.data, "add")
    ash, bsh = a.shape, b.shape
    return _record(out, (a, b), lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh)))


def sub(a, b):
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    if not isinstance(a, Tensor):
        return add(mul(b, -1.0), float(a))
    _same_dtype(a, b)
    out = Tensor(a.data - b.data)
    _check_finite(out.data, "sub")
    ash, bsh = a.shape, b.shape
    return _record(out, (a, b), lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh)))


def mul(a, b):
    if not isinstance(b, Tensor) and not isinstance(a, Tensor):
        raise TypeError("mul needs at least one Tensor")
    if not isinstance(b, Tensor):
        a = astensor(a)
        c = float(b)
        out = Tensor(a.data * c)
        _check_finite(out.data, "mul")
        return _record(out, (a,), lambda g: (g * c,))
    if not isinstance(a, Tensor):
        return mul(b, a)
    _same_dtype(a, b)
    out = Tensor(a.data * b.data)
    _check_finite(out.data, "mul")
    ad, bd = a.data, b.data
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def exp(x):
    x = astensor(x)
    with np.errstate(over="ignore"):
        out = Tensor(np.exp(x.data))
    _check_finite(out.data, "exp")
    od = out.data
    return _record(out, (x,), lambda g: (g * od,))


def log(x):
    x = astensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor(np.log(x.data))
    _check_finite(out.data, "log")
    xd = x.data
    return _record(out, (x,), lambda g: (g / xd,))


def absval(x):
    """|x| elementwise; subgradient 0 at exactly 0."""
    x = astensor(x)
    out = Tensor(np.abs(x.data))
    _check_finite(out.data, "abs")
    sign = np.sign(x.data)
    return _record(out, (x,), lambda g: (g * sign,))


def tsum(x, axis=None, keepdims=False):
    x = astensor(x)
    out = Tensor(np.sum(x.data, axis=axis, keepdims=keepdims, dtype=x.data.dtype))
    _check_finite(out.data, "sum")
    xsh = x.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, xsh).astype(g.dtype, copy=False).copy(),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, xsh).copy(),)

    return _record(out, (x,), bwd)


def tmean(x, axis=None, keepdims=False):
    x = astensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# Activations


def relu(x):
    x = astensor(x)
    out = Tensor(np.maximum(x.data, 0))
    _check_finite(out.data, "relu")
    pos = x.data > 0
    return _record(out, (x,), lambda g: (g * pos,))


def sigmoid(x):
    x = astensor(x)
    # Stable two-branch form: never exponentiates a positive argument.
    xd = x.data
    e = np.exp(-np.abs(xd))
    s = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype)
    out = Tensor(s)
    _check_finite(out.data, "sigmoid")
    return _record(out, (x,), lambda g: (g * (s * (1.0 - s)),))


def tanh(x):
    x = astensor(x)
    t = np.tanh(x.data)
    out = Tensor(t)
    _check_finite(out.data, "tanh")
    return _record(out, (x,), lambda g: (g * (1.0 - t * t),))


def softmax_channel(x):
    """Softmax along axis 1 (the class/channel axis), log-sum-exp stabilized."""
    x = astensor(x)
    if x.ndim < 2:
        raise ShapeError("softmax_channel expects at least 2 dims (N, C, ...)")
    z = x.data - np.max(x.data, axis=1, keepdims=True)
    ez = np.exp(z)
    s = ez / np.sum(ez, axis=1, keepdims=True)
    out = Tensor(s)
    _check_finite(out.data, "softmax_channel")

    def bwd(g):
        dot = np.sum(g * s, axis=1, keepdims=True)
        return (s * (g - dot),)

    return _record(out, (x,), bwd)


def log_softmax_channel(x):
    """log softmax along axis 1 in stable log-sum-exp form."""
    x = astensor(x)
    if x.ndim < 2:
        raise ShapeError("log_softmax_channel expects at least 2 dims (N, C, ...)")
    m = np.max(x.data, axis=1, keepdims=True)
    z = x.data - m
    lse = np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    out = Tensor(z - lse)
    _check_finite(out.data, "log_softmax_channel")
    sm = np.exp(out.data)

    def bwd(g):
        return (g - sm * np.sum(g, axis=1, keepdims=True),)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# Shape ops


def concat(tensors, axis=1):
    tensors = [astensor(t) for t in tensors]
    _same_dtype(*tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    _check_finite(out.data, "concat")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), bwd)


def narrow(x, axis, start, length):
    """Contiguous slice of ``length`` entries along ``axis`` starting at ``start``."""
    x = astensor(x)
    if start < 0 or start + length > x.shape[axis]:
        raise ShapeError(f"narrow [{start}:{start + length}] out of range for axis {axis} "
                         f"of extent {x.shape[axis]}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(x.data[idx].copy())
    xsh = x.shape

    def bwd(g):
        full = np.zeros(xsh, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _record(out, (x,), bwd)


def _shuffle_data(d, r):
    n, crr, h, w = d.shape
    c = crr // (r * r)
    y = d.reshape(n, c, r, r, h, w)
    y = y.transpose(0, 1, 4, 2, 5, 3)  # n, c, h, r, w, r
    return np.ascontiguousarray(y).reshape(n, c, h * r, w * r)


def _unshuffle_data(d, r):
    n, c, hr, wr = d.shape
    h, w = hr // r, wr // r
    y = d.reshape(n, c, h, r, w, r)
    y = y.transpose(0, 1, 3, 5, 2, 4)  # n, c, r, r, h, w
    return np.ascontiguousarray(y).reshape(n, c * r * r, h, w)


def pixel_shuffle(x, r):
    """Depth-to-space: (N, C*r*r, H, W) -> (N, C, H*r, W*r). Pure data movement."""
    x = astensor(x)
    if x.ndim != 4:
        raise ShapeError(f"pixel_shuffle expects NCHW, got {x.ndim} dims")
    if r < 1:
        raise ShapeError(f"pixel_shuffle factor must be >= 1, got {r}")
    if x.shape[1] % (r * r) != 0:
        raise ShapeError(f"channels {x.shape[1]} not divisible by r^2={r * r}")
    out = Tensor(_shuffle_data(x.data, r))
    return _record(out, (x,), lambda g: (_unshuffle_data(g, r),))


def pixel_unshuffle(x, r):
    """Space-to-depth, the exact index inverse of ``pixel_shuffle``."""
    x = astensor(x)
    if x.ndim != 4:
        raise ShapeError(f"pixel_unshuffle expects NCHW, got {x.ndim} dims")
    if x.shape[2] % r != 0 or x.shape[3] % r != 0:
        raise ShapeError(f"spatial extents {x.shape[2:]} not divisible by r={r}")
    out = Tensor(_unshuffle_data(x.data, r))
    return _record(out, (x,), lambda g: (_shuffle_data(g, r),))


def upsample_nearest(x, r):
    """Nearest-neighbor spatial upsampling by integer factor ``r``."""
    x = astensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest expects NCHW, got {x.ndim} dims")
    out = Tensor(np.repeat(np.repeat(x.data, r, axis=2), r, axis=3))
    n, c, h, w = x.shape

    def bwd(g):
        return (g.reshape(n, c, h, r, w, r).sum(axis=(3, 5)),)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# Convolution


def _pad_pair(padding):
    if isinstance(padding, tuple):
        return padding
    return (int(padding), int(padding))


def _conv_windows(xp, kh, kw, stride, oh, ow):
    s = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(xp.shape[0], xp.shape[1], oh, ow, kh, kw),
        strides=(s[0], s[1], s[2] * stride, s[3] * stride, s[2], s[3]),
        writeable=False,
    )


def conv2d(x, kernel, bias=None, stride=1, padding=0):
    """2-d cross-correlation with zero padding.

    x: (N, C, H, W); kernel: (O, C, kh, kw); bias: (O,) or None.
    Output spatial extent: floor((H + 2*ph - kh)/stride) + 1 (same for W).
    Implemented as strided window extraction plus one GEMM per call.
    """
    x = astensor(x)
    kernel = astensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OCkhkw kernel, "
                         f"got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    o, ck, kh, kw = kernel.shape
    if ck != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {ck}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    ph, pw = _pad_pair(padding)
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input "
                         f"{h + 2 * ph}x{w + 2 * pw}")
    if bias is not None:
        bias = astensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"bias shape {bias.shape} != ({o},)")
        _same_dtype(x, kernel, bias)
    else:
        _same_dtype(x, kernel)

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    oh = (h + 2 * ph - kh) // stride + 1
    ow = (w + 2 * pw - kw) // stride + 1
    win = _conv_windows(xp, kh, kw, stride, oh, ow)           # n,c,oh,ow,kh,kw
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    kmat = kernel.data.reshape(o, c * kh * kw)
    y = cols @ kmat.T                                          # (n*oh*ow, o)
    if bias is not None:
        y += bias.data
    out_data = np.ascontiguousarray(
        y.reshape(n, oh, ow, o).transpose(0, 3, 1, 2))
    out = Tensor(out_data)
    _check_finite(out.data, "conv2d")

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    need_x = x.requires_grad
    need_k = kernel.requires_grad
    need_b = bias is not None and bias.requires_grad

    def bwd(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, o)
        gk = None
        if need_k:
            gk = (gmat.T @ cols).reshape(o, c, kh, kw)
        gx = None
        if need_x:
            gcols = gmat @ kmat                                # (n*oh*ow, c*kh*kw)
            gcols = gcols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            gxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=g.dtype)
            for i in range(kh):
                hi = i + stride * oh
                for j in range(kw):
                    wj = j + stride * ow
                    gxp[:, :, i:hi:stride, j:wj:stride] += gcols[:, :, i, j]
            gx = gxp[:, :, ph:ph + h, pw:pw + w] if (ph or pw) else gxp
        gb = gmat.sum(axis=0) if need_b else None
        if bias is None:
            return (gx, gk)
        return (gx, gk, gb)

    return _record(out, inputs, bwd)


# ---------------------------------------------------------------------------
# Batch normalization


def batch_norm2d(x, gamma, beta, running_mean, running_var, training,
                 eps=1e-5, momentum=0.1):
    """Per-channel batch normalization over (N, H, W).

    Train mode normalizes by batch statistics and updates the running
    arrays in place (unbiased variance, classic momentum blend). Eval mode
    normalizes by the running statistics, which are constants for autodiff.
    Zero-variance channels are floored by ``eps``.
    """
    x = astensor(x)
    gamma = astensor(gamma)
    beta = astensor(beta)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm2d expects NCHW, got {x.ndim} dims")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    _same_dtype(x, gamma, beta)
    m = x.shape[0] * x.shape[2] * x.shape[3]

    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu
        unbiased = var * (m / (m - 1.0)) if m > 1 else var
        running_var *= (1.0 - momentum)
        running_var += momentum * unbiased
    else:
        mu = running_mean.astype(x.data.dtype, copy=False)
        var = running_var.astype(x.data.dtype, copy=False)

    inv_std = 1.0 / np.sqrt(var + eps)
    mu4 = mu.reshape(1, c, 1, 1)
    inv4 = inv_std.reshape(1, c, 1, 1).astype(x.data.dtype)
    xhat = (x.data - mu4) * inv4
    out = Tensor(gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1))
    _check_finite(out.data, "batch_norm2d")

    g4 = gamma.data.reshape(1, c, 1, 1)

    def bwd(g):
        ggamma = np.sum(g * xhat, axis=(0, 2, 3))
        gbeta = np.sum(g, axis=(0, 2, 3))
        gxhat = g * g4
        if training:
            # Gradient through the batch statistics themselves.
            t1 = gxhat - gxhat.mean(axis=(0, 2, 3), keepdims=True)
            t2 = xhat * (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            gx = (t1 - t2) * inv4
        else:
            gx = gxhat * inv4
        return (gx, ggamma, gbeta)

    return _record(out, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# Gradient checking


@dataclass
class GradCheckReport:
    """Result of a finite-difference comparison, per input tensor."""

    max_rel_err: float
    per_input: list = field(default_factory=list)  # (index, max rel err, n checked)
    n_checked: int = 0

    def ok(self, tolerance):
        return self.max_rel_err <= tolerance


def _rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def grad_check(fn, inputs, step=1e-3, tolerance=1e-4, sample=None, rng=None):
    """Compare analytic gradients of scalar ``fn(*inputs)`` to central differences.

    Inputs must be float64 tensors (finite differences need the headroom).
    ``sample`` limits the number of probed elements per input; ``None``
    probes every element. Relative error uses max(|a|, |n|, 1e-6) as the
    denominator so near-zero gradient pairs compare absolutely.
    """
    inputs = list(inputs)
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ShapeError("grad_check requires float64 inputs")
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = fn(*inputs)
    if out.size != 1:
        raise ShapeError("grad_check target must be scalar-valued")
    tape.backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]

    if rng is None:
        rng = np.random.default_rng(0)
    report = GradCheckReport(max_rel_err=0.0)
    for idx, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        n_el = flat.size
        if sample is not None and sample < n_el:
            positions = rng.choice(n_el, size=sample, replace=False)
        else:
            positions = range(n_el)
        worst = 0.0
        count = 0
        for pos in positions:
            orig = flat[pos]
            flat[pos] = orig + step
            fp = fn(*inputs).item()
            flat[pos] = orig - step
            fm = fn(*inputs).item()
            flat[pos] = orig
            numeric = (fp - fm) / (2.0 * step)
            worst = max(worst, _rel_err(float(analytic[idx].reshape(-1)[pos]), numeric))
            count += 1
        report.per_input.append((idx, worst, count))
        report.n_checked += count
        report.max_rel_err = max(report.max_rel_err, worst)
    if report.max_rel_err > tolerance:
        warnings.warn(f"grad_check exceeded tolerance: {report.max_rel_err:.3e} > "
                      f"{tolerance:.1e}", stacklevel=2)
    return report


# ---------------------------------------------------------------------------
# Serialization: JSON header line + raw little-endian bytes, row-major.


_DTYPE_TAGS = {"float32": "<f4", "float64": "<f8"}


def write_tensor(fp, array, name=None):
    """Append one array record: JSON header line, then raw LE bytes."""
    arr = array.data if isinstance(array, Tensor) else np.asarray(array)
    tag = arr.dtype.name
    if tag not in _DTYPE_TAGS:
        raise ShapeError(f"unsupported dtype for serialization: {tag}")
    header = {"dtype": tag, "shape": list(arr.shape)}
    if name is not None:
        header["name"] = name
    fp.write((json.dumps(header) + "\n").encode("utf-8"))
    fp.write(np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag]).tobytes())


def read_tensor(fp):
    """Read one record written by ``write_tensor``; returns (array, name).

    Raises ``ValueError`` on a malformed header or truncated payload, and
    returns (None, None) at a clean end of stream.
    """
    line = fp.readline()
    if not line:
        return None, None
    try:
        header = json.loads(line.decode("utf-8"))
        dtype = header["dtype"]
        shape = tuple(int(s) for s in header["shape"])
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise ValueError(f"malformed tensor header: {e}") from e
    if dtype not in _DTYPE_TAGS:
        raise ValueError(f"unsupported dtype in header: {dtype}")
    nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(_DTYPE_TAGS[dtype]).itemsize
    payload = fp.read(nbytes)
    if len(payload) != nbytes:
        raise ValueError(f"truncated tensor payload: wanted {nbytes} bytes, "
                         f"got {len(payload)}")
    arr = np.frombuffer(payload, dtype=_DTYPE_TAGS[dtype]).reshape(shape)
    return arr.astype(dtype, copy=True), header.get("name")
