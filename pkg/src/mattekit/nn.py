"""Layer library on top of the tensor engine.

A small Module system (auto-registered parameters, buffers, children) and
the building blocks the network needs: convolutions, batch norm, residual
blocks, global convolutions, sub-pixel and nearest upsampling, and a
convolutional LSTM cell.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


class Module:
    """Base class with automatic registration.

    Assigning a Tensor attribute registers it as a parameter when it
    requires grad and as a buffer otherwise; assigning a Module registers a
    child. Iteration orders follow assignment order, so walks are
    deterministic.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        for reg in (self._params, self._buffers, self._children):
            reg.pop(name, None)
        if isinstance(value, Tensor):
            (self._params if value.requires_grad else self._buffers)[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def named_state(self):
        """Parameters then buffers, one flat deterministic ordering."""
        yield from self.named_parameters()
        yield from self.named_buffers()

    def param_count(self):
        return sum(p.size for _, p in self.named_parameters())

    def train(self, mode=True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.zero_grad()

    def load_state(self, arrays):
        """Copy a {name: array} mapping into parameters and buffers."""
        own = dict(self.named_state())
        missing = set(own) - set(arrays)
        extra = set(arrays) - set(own)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for name, tensor in own.items():
            src = np.asarray(arrays[name])
            if src.shape != tensor.shape:
                raise ValueError(f"{name}: shape {src.shape} != {tensor.shape}")
            tensor.data[...] = src.astype(tensor.dtype, copy=False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    """Sequence of children, registered by index."""

    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module):
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def he_normal(rng, shape, fan_in, dtype=np.float32):
    """Fan-in scaled normal init for layers followed by ReLU."""
    std = math.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, padding="same", bias=True,
                 dtype=np.float32):
        super().__init__()
        kh, kw = (k, k) if isinstance(k, int) else k
        if padding == "same":
            padding = (kh // 2, kw // 2)
        self.stride = stride
        self.padding = padding
        self.weight = Tensor(he_normal(rng, (cout, cin, kh, kw), cin * kh * kw, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride,
                        padding=self.padding)


class BatchNorm2d(Module):
    def __init__(self, ch, dtype=np.float32, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(ch, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(ch, dtype=dtype), requires_grad=True)
        self.running_mean = Tensor(np.zeros(ch, dtype=dtype))
        self.running_var = Tensor(np.ones(ch, dtype=dtype))

    def forward(self, x):
        return T.batch_norm2d(x, self.gamma, self.beta,
                              self.running_mean.data, self.running_var.data,
                              training=self.training, eps=self.eps,
                              momentum=self.momentum)


class Identity(Module):
    def forward(self, x):
        return x


def make_norm(norm, ch, dtype=np.float32):
    if norm == "batch":
        return BatchNorm2d(ch, dtype=dtype)
    if norm == "none":
        return Identity()
    raise ValueError(f"unknown norm {norm!r}")


class ConvNormRelu(Module):
    def __init__(self, cin, cout, k, rng, norm="batch", stride=1, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(cin, cout, k, rng, stride=stride, dtype=dtype)
        self.norm = make_norm(norm, cout, dtype)

    def forward(self, x):
        return T.relu(self.norm(self.conv(x)))


class ResBlock(Module):
    """Two 3x3 convs with a residual connection.

    A 1x1 projection aligns the shortcut when the stride or width changes.
    """

    def __init__(self, cin, cout, rng, stride=1, norm="batch", dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2d(cin, cout, 3, rng, stride=stride, dtype=dtype)
        self.norm1 = make_norm(norm, cout, dtype)
        self.conv2 = Conv2d(cout, cout, 3, rng, dtype=dtype)
        self.norm2 = make_norm(norm, cout, dtype)
        if stride != 1 or cin != cout:
            self.proj = Conv2d(cin, cout, 1, rng, stride=stride, dtype=dtype)
        else:
            self.proj = Identity()

    def forward(self, x):
        y = T.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return T.relu(T.add(y, self.proj(x)))


class GlobalConv(Module):
    """Large-kernel context layer as two crossed separable paths.

    Path one applies (k x 1) then (1 x k); path two (1 x k) then (k x 1);
    outputs are summed. One output pixel sees a (2k-1) x (2k-1) window at
    the cost of four thin convolutions.
    """

    def __init__(self, cin, cout, k, rng, dtype=np.float32):
        super().__init__()
        if k % 2 == 0:
            raise ValueError(f"global conv kernel must be odd, got {k}")
        self.a1 = Conv2d(cin, cout, (k, 1), rng, dtype=dtype)
        self.a2 = Conv2d(cout, cout, (1, k), rng, dtype=dtype)
        self.b1 = Conv2d(cin, cout, (1, k), rng, dtype=dtype)
        self.b2 = Conv2d(cout, cout, (k, 1), rng, dtype=dtype)

    def forward(self, x):
        return T.add(self.a2(self.a1(x)), self.b2(self.b1(x)))


class UpBlock(Module):
    """Double the spatial extent.

    Sub-pixel mode expands channels 4x with a conv and rearranges them into
    space; the fallback is nearest-neighbor upsampling followed by a conv.
    """

    def __init__(self, cin, cout, rng, use_sp=True, norm="batch", dtype=np.float32):
        super().__init__()
        self.use_sp = use_sp
        if use_sp:
            self.conv = Conv2d(cin, cout * 4, 3, rng, dtype=dtype)
        else:
            self.conv = Conv2d(cin, cout, 3, rng, dtype=dtype)
        self.norm = make_norm(norm, cout, dtype)

    def forward(self, x):
        if self.use_sp:
            y = T.pixel_shuffle(self.conv(x), 2)
        else:
            y = self.conv(T.upsample_nearest(x, 2))
        return T.relu(self.norm(y))


class ConvLSTMCell(Module):
    """Convolutional LSTM: one 3x3 conv on [x; h] produces all four gates."""

    def __init__(self, cin, ch, rng, dtype=np.float32):
        super().__init__()
        self.ch = ch
        self.gates = Conv2d(cin + ch, 4 * ch, 3, rng, dtype=dtype)

    def init_state(self, n, h, w, dtype=np.float32):
        z = np.zeros((n, self.ch, h, w), dtype=dtype)
        return Tensor(z.copy()), Tensor(z.copy())

    def forward(self, x, h, c):
        if x.shape[2:] != h.shape[2:] or x.shape[2:] != c.shape[2:]:
            raise ShapeError(f"extent mismatch: x {x.shape}, h {h.shape}, c {c.shape}")
        z = self.gates(T.concat([x, h], axis=1))
        ch = self.ch
        i = T.sigmoid(T.narrow(z, 1, 0, ch))
        f = T.sigmoid(T.narrow(z, 1, ch, ch))
        o = T.sigmoid(T.narrow(z, 1, 2 * ch, ch))
        g = T.tanh(T.narrow(z, 1, 3 * ch, ch))
        c_next = T.add(T.mul(f, c), T.mul(i, g))
        h_next = T.mul(o, T.tanh(c_next))
        return h_next, c_next
