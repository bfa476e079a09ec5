"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tape` is activated with ``with tape:``; while active, every
primitive whose inputs require gradients appends a record holding its
cached inputs and a backward closure. ``tape.backward(loss)`` replays the
records in reverse order, accumulating gradients additively at fan-out
nodes, and consumes the tape.

Outside an active tape operations are plain numpy evaluations, which is
what inference and target-network passes use.
"""

from __future__ import annotations

import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "depthnav_active_tape", default=None
)

DTYPE = np.float64


class Tensor:
    """An array node. Leaves that should receive gradients are :class:`Parameter`."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to the Tensor operators

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A named trainable leaf."""

    __slots__ = ()

    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=DTYPE, copy=True), requires_grad=True, name=name)


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitives executed while the tape is active."""

    def __init__(self):
        self._records: list[_Record] = []
        self._token = None
        self.consumed = False

    def __enter__(self) -> "Tape":
        if self.consumed:
            raise RuntimeError("tape already consumed by backward()")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self._records)

    def _record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self._records.append(_Record(out, tuple(inputs), backward))

    def backward(self, loss: Tensor, wrt: Iterable[Tensor] | None = None):
        """Backpropagate from a scalar ``loss``.

        Returns ``{name: grad}`` for every :class:`Parameter` reached, or, when
        ``wrt`` is given, a list of gradients aligned with it (zeros for
        tensors the loss does not depend on).
        """
        if self.consumed:
            raise RuntimeError("tape already consumed by backward()")
        if not isinstance(loss, Tensor) or loss.size != 1:
            shape = getattr(loss, "shape", None)
            raise ValueError(f"backward() needs a scalar loss, got shape {shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        params: dict[int, Parameter] = {}
        for rec in reversed(self._records):
            g_out = grads.pop(id(rec.out), None)
            if g_out is None:
                continue
            in_grads = rec.backward(g_out)
            for t, g in zip(rec.inputs, in_grads):
                if g is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                if isinstance(t, Parameter):
                    params[key] = t
        self._records.clear()
        self.consumed = True
        if wrt is not None:
            return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]
        out: dict[str, np.ndarray] = {}
        for key, p in params.items():
            if p.name in out:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            out[p.name] = grads[key]
        return out


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


class no_grad:
    """Suspend the active tape: operations inside are plain evaluations."""

    def __enter__(self):
        self._token = _ACTIVE_TAPE.set(None)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    tape = _ACTIVE_TAPE.get()
    if tape is None or not needs:
        return Tensor(data)
    out = Tensor(data, requires_grad=True)
    tape._record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def detach(x: Tensor) -> Tensor:
    """Same values, cut from the graph."""
    return Tensor(as_tensor(x).data)


# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _emit(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _emit(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _emit(ad**exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _emit(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _emit(np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out = np.logaddexp(0.0, ad)
    return _emit(out, (a,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * ad)),))


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    pos = ad > 0
    return _emit(np.where(pos, ad, slope * ad), (a,), lambda g: (np.where(pos, g, slope * g),))


def clip(a, lo: float, hi: float) -> Tensor:
    """Hard clamp; the gradient is zero where the clamp is active."""
    a = as_tensor(a)
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return _emit(np.clip(ad, lo, hi), (a,), lambda g: (g * inside,))


def clamp_inward(a, lo: float, hi: float) -> Tensor:
    """Hard clamp whose gradient still flows where a descent step points back inside.

    The forward value equals :func:`clip`. Outside the bounds the gradient is
    kept only when ``-g`` moves the raw value toward the interval, so units
    stuck beyond a bound can recover instead of going dead.
    """
    a = as_tensor(a)
    ad = a.data

    def back(g):
        keep = ((ad >= lo) & (ad <= hi)) | ((ad > hi) & (g > 0)) | ((ad < lo) & (g < 0))
        return (g * keep,)

    return _emit(np.clip(ad, lo, hi), (a,), back)


# reductions and shape ops


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _emit(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, index, g)
        return (full,)

    return _emit(a.data[index], (a,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _emit(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {ad.shape} @ {bd.shape}")
    return _emit(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with weight stored as (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        inputs.append(bias)

    def backward(g):
        grads = [g @ wd, g.T @ xd]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return _emit(out, inputs, backward)


# convolutions (NCHW, square kernels)


def conv_output_size(n: int, kernel: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - kernel) // stride + 1


def deconv_output_size(n: int, kernel: int, stride: int, padding: int, output_padding: int = 0) -> int:
    return (n - 1) * stride - 2 * padding + kernel + output_padding


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(B, C, Hp, Wp) padded input -> (B*ho*wo, C*k*k) patch matrix."""
    b, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * ho * wo, c * k * k)


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int], k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches into a padded buffer."""
    b, c, hp, wp = shape
    # one transposing copy so every tap is a contiguous channels-last block
    taps = cols.reshape(b, ho, wo, c, k, k).transpose(4, 5, 0, 1, 2, 3).copy()
    out = np.zeros((b, hp, wp, c), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            out[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += taps[i, j]
    return out.transpose(0, 3, 1, 2)


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with weight (out, in, k, k)."""
    x, weight = as_tensor(x), as_tensor(weight)
    xd, wd = x.data, weight.data
    b, c, h, w = xd.shape
    o, ci, k, k2 = wd.shape
    if ci != c or k != k2:
        raise ValueError(f"conv2d: input channels {c} vs weight {wd.shape}")
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = wd.reshape(o, -1)
    out = cols @ wmat.T
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data
        inputs.append(bias)
    out = out.reshape(b, ho, wo, o).transpose(0, 3, 1, 2)
    xp_shape = xp.shape
    need_dx = x.requires_grad

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        dw = (g2.T @ cols).reshape(wd.shape)
        dx = None
        if need_dx:
            dxp = _col2im(g2 @ wmat, xp_shape, k, stride, ho, wo)
            dx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        grads = [dx, dw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _emit(np.ascontiguousarray(out), inputs, backward)


def conv_transpose2d(x, weight, bias=None, stride: int = 1, padding: int = 0, output_padding: int = 0) -> Tensor:
    """Transposed convolution with weight (in, out, k, k); the adjoint of :func:`conv2d`."""
    x, weight = as_tensor(x), as_tensor(weight)
    xd, wd = x.data, weight.data
    b, cin, h, w = xd.shape
    ci, co, k, k2 = wd.shape
    if ci != cin or k != k2:
        raise ValueError(f"conv_transpose2d: input channels {cin} vs weight {wd.shape}")
    ho = deconv_output_size(h, k, stride, padding, output_padding)
    wo = deconv_output_size(w, k, stride, padding, output_padding)
    full = ((h - 1) * stride + k + output_padding, (w - 1) * stride + k + output_padding)
    xflat = xd.transpose(0, 2, 3, 1).reshape(-1, cin)
    wmat = wd.reshape(cin, -1)
    cols = xflat @ wmat
    buf = _col2im(cols, (b, co) + full, k, stride, h, w)
    out = buf[:, :, padding : padding + ho, padding : padding + wo]
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data.reshape(1, -1, 1, 1)
        inputs.append(bias)
    need_dx = x.requires_grad

    def backward(g):
        gbuf = np.zeros((b, co) + full, dtype=DTYPE)
        gbuf[:, :, padding : padding + ho, padding : padding + wo] = g
        gcols = _im2col(gbuf, k, stride, h, w)
        dw = (xflat.T @ gcols).reshape(wd.shape)
        dx = (gcols @ wmat.T).reshape(b, h, w, cin).transpose(0, 3, 1, 2) if need_dx else None
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _emit(np.ascontiguousarray(out), inputs, backward)
