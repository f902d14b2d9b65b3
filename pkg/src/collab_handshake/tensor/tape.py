"""Reverse-mode differentiation over a recorded tape of numpy ops.

Every forward op appends ``(output, inputs, backward_fn)`` to the tape;
:meth:`Tape.backward` walks the record in reverse. The models are tiny and
fixed-topology, so there is no graph optimisation of any kind.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DimensionError, StateError

DTYPE = np.float64
MAX_RANK = 4


class Var:
    """A value on the tape. ``grad`` is populated by :meth:`Tape.backward`."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad=False):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"


def _as_array(value, dtype=DTYPE):
    arr = np.asarray(value, dtype=dtype)
    if arr.ndim > MAX_RANK + 1:
        raise DimensionError(f"rank {arr.ndim} exceeds supported rank")
    return arr


class Tape:
    """Records differentiable ops. ``Tape(grad=False)`` evaluates without recording."""

    def __init__(self, grad=True, trace_kinks=False, dtype=DTYPE):
        self.grad_enabled = grad
        # a wider float (np.longdouble) is only meaningful for grad=False evaluation
        self.dtype = np.dtype(dtype)
        self._ops = []
        self._params = []
        # sign patterns of every relu input, for spotting kink crossings in gradient checks
        self.kinks = [] if trace_kinks else None

    def __len__(self):
        return len(self._ops)

    # -- leaves -----------------------------------------------------------
    def constant(self, value):
        return Var(_as_array(value, self.dtype), requires_grad=False)

    def input(self, value):
        """A leaf whose gradient is kept after backward."""
        return Var(_as_array(value, self.dtype), requires_grad=True)

    def param(self, store, name):
        if not self.grad_enabled:
            return Var(store[name].astype(self.dtype, copy=False), requires_grad=False)
        var = Var(store[name], requires_grad=True)
        self._params.append((var, store, name))
        return var

    def record(self, value, inputs, backward):
        """Append a custom op. ``backward(g)`` returns one gradient (or None) per input."""
        out = Var(value, requires_grad=any(v.requires_grad for v in inputs))
        if out.requires_grad:
            self._ops.append((out, inputs, backward))
        return out

    # -- reverse pass -----------------------------------------------------
    def backward(self, out, grad=None):
        if not self._ops:
            raise StateError("backward called before any differentiable forward op")
        for o, inputs, _ in self._ops:
            o.grad = None
            for v in inputs:
                v.grad = None
        if grad is None:
            if out.value.size != 1:
                raise DimensionError("implicit seed gradient needs a scalar output")
            grad = np.ones_like(out.value)
        out.grad = np.asarray(grad, dtype=DTYPE)
        for o, inputs, fn in reversed(self._ops):
            if o.grad is None:
                continue
            for v, g in zip(inputs, fn(o.grad)):
                if g is None or not v.requires_grad:
                    continue
                v.grad = g if v.grad is None else v.grad + g
        for var, store, name in self._params:
            if var.grad is not None:
                store.grads[name] += var.grad

    # -- elementwise / shape ops ----------------------------------------
    def add(self, a, b):
        if a.shape != b.shape:
            raise DimensionError(f"add: {a.shape} vs {b.shape}")
        return self.record(a.value + b.value, (a, b), lambda g: (g, g))

    def scale(self, a, c):
        return self.record(a.value * c, (a,), lambda g: (g * c,))

    def relu(self, x):
        mask = x.value > 0
        if self.kinks is not None:
            self.kinks.append(mask)
        return self.record(x.value * mask, (x,), lambda g: (g * mask,))

    def tanh(self, x):
        y = np.tanh(x.value)
        return self.record(y, (x,), lambda g: (g * (1.0 - y * y),))

    def reshape(self, x, shape):
        old = x.shape
        return self.record(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))

    def index(self, x, key):
        """Basic (slice/int) indexing."""
        old = x.shape

        def bw(g):
            dx = np.zeros(old, dtype=DTYPE)
            dx[key] = g
            return (dx,)

        return self.record(np.array(x.value[key]), (x,), bw)

    def sum(self, x, weights=None):
        """Scalar ``sum(x * weights)``; the weights are a constant array."""
        if weights is None:
            return self.record(np.array(x.value.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))
        w = np.asarray(weights, dtype=DTYPE)
        if w.shape != x.shape:
            raise DimensionError(f"sum weights {w.shape} vs {x.shape}")
        return self.record(np.array((x.value * w).sum()), (x,), lambda g: (w * float(g),))

    def concat_channels(self, parts):
        """Concatenate along the channel axis (third from last)."""
        spatial = {p.shape[-2:] for p in parts}
        lead = {p.shape[:-3] for p in parts}
        if len(spatial) != 1 or len(lead) != 1:
            raise DimensionError(f"concat_channels needs equal extents, got {[p.shape for p in parts]}")
        sizes = [p.shape[-3] for p in parts]
        bounds = np.cumsum(sizes)[:-1]

        def bw(g):
            return tuple(np.split(g, bounds, axis=-3))

        return self.record(np.concatenate([p.value for p in parts], axis=-3), tuple(parts), bw)

    # -- layers -----------------------------------------------------------
    def linear(self, x, w, b=None):
        """``x @ w + b`` for x of shape (batch, in)."""
        if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[0]:
            raise DimensionError(f"linear: x{x.shape} @ W{w.shape}")
        if b is not None and b.shape != (w.shape[1],):
            raise DimensionError(f"linear: bias {b.shape} for W{w.shape}")
        y = x.value @ w.value
        if b is None:
            return self.record(y, (x, w), lambda g: (g @ w.value.T, x.value.T @ g))
        y = y + b.value
        return self.record(y, (x, w, b), lambda g: (g @ w.value.T, x.value.T @ g, g.sum(axis=0)))

    def conv3x3(self, x, w, b, stride=1):
        """3x3 convolution, zero padding 1. Accepts (C,H,W) or (B,C,H,W)."""
        if stride not in (1, 2):
            raise ConfigError(f"conv3x3 stride must be 1 or 2, got {stride}")
        unbatched = x.value.ndim == 3
        xv = x.value[None] if unbatched else x.value
        if xv.ndim != 4 or w.value.ndim != 4 or w.shape[2:] != (3, 3) or w.shape[1] != xv.shape[1]:
            raise DimensionError(f"conv3x3: x{x.shape} with kernels {w.shape}")
        if b.shape != (w.shape[0],):
            raise DimensionError(f"conv3x3: bias {b.shape} for kernels {w.shape}")
        n, c, h, wd = xv.shape
        o = w.shape[0]
        ho, wo = (h - 1) // stride + 1, (wd - 1) // stride + 1
        xh = _pad_nhwc(xv)
        # taps[c, t, o] = w[o, c, i, j] with t = 3 * i + j
        taps = w.value.reshape(o, c, 9).transpose(1, 2, 0)
        if stride == 1:
            # multiply first, then shift-add the 9 taps: far less memory than patches
            z = (xh.reshape(-1, c) @ taps.reshape(c, 9 * o)).reshape(n, h + 2, wd + 2, 9, o)
            yh = np.zeros((n, h, wd, o), dtype=xh.dtype)
            for t in range(9):
                i, j = divmod(t, 3)
                yh += z[:, i:i + h, j:j + wd, t, :]
            cols = None
        else:
            parts = [xh[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] for i in range(3) for j in range(3)]
            cols = np.stack(parts, axis=-2).reshape(n * ho * wo, 9 * c)
            yh = (cols @ taps.transpose(1, 0, 2).reshape(9 * c, o)).reshape(n, ho, wo, o)
        y = np.ascontiguousarray((yh + b.value).transpose(0, 3, 1, 2))
        if unbatched:
            y = y[0]

        def bw(g):
            gh = np.ascontiguousarray((g[None] if unbatched else g).transpose(0, 2, 3, 1))
            gm = gh.reshape(-1, o)
            db = gm.sum(axis=0)
            if cols is not None:
                dw = (cols.T @ gm).reshape(9, c, o).transpose(2, 1, 0).reshape(w.shape)
            else:
                gcat = np.zeros((n, h + 2, wd + 2, 9, o), dtype=DTYPE)
                for t in range(9):
                    i, j = divmod(t, 3)
                    gcat[:, i:i + h, j:j + wd, t, :] = gh
                dw = (xh.reshape(-1, c).T @ gcat.reshape(-1, 9 * o)).reshape(c, 9, o).transpose(2, 0, 1).reshape(w.shape)
            if not x.requires_grad:
                return (None, dw, db)
            back = (gm @ taps.transpose(2, 1, 0).reshape(o, 9 * c)).reshape(n, ho, wo, 9, c)
            dxh = np.zeros_like(xh)
            for t in range(9):
                i, j = divmod(t, 3)
                dxh[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += back[:, :, :, t, :]
            dx = np.ascontiguousarray(dxh[:, 1:-1, 1:-1, :].transpose(0, 3, 1, 2))
            return (dx[0] if unbatched else dx, dw, db)

        return self.record(y, (x, w, b), bw)

    def global_avg_pool(self, x):
        """(..., C, H, W) -> (..., C)"""
        h, wd = x.shape[-2:]

        def bw(g):
            return (np.broadcast_to(g[..., None, None] / (h * wd), x.shape).copy(),)

        return self.record(x.value.mean(axis=(-2, -1)), (x,), bw)

    def upsample2x(self, x):
        """Nearest-neighbour upsampling of the last two axes."""
        y = x.value.repeat(2, axis=-2).repeat(2, axis=-1)

        def bw(g):
            s = g.shape
            return (g.reshape(s[:-2] + (s[-2] // 2, 2, s[-1] // 2, 2)).sum(axis=(-3, -1)),)

        return self.record(y, (x,), bw)

    def softmax_rows(self, x):
        y = softmax(x.value)

        def bw(g):
            return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

        return self.record(y, (x,), bw)

    def weighted_sum(self, alpha, maps):
        """``sum_i alpha[b, i] * maps[b, i]`` for alpha (B, n) and maps (B, n, ...)."""
        if alpha.shape != maps.shape[:2]:
            raise DimensionError(f"weighted_sum: weights {alpha.shape} vs maps {maps.shape}")
        extra = (1,) * (maps.value.ndim - 2)
        a = alpha.value.reshape(alpha.shape + extra)
        y = (a * maps.value).sum(axis=1)

        def bw(g):
            ge = g[:, None]
            da = (ge * maps.value).reshape(alpha.shape + (-1,)).sum(axis=-1)
            return (da, a * ge)

        return self.record(y, (alpha, maps), bw)

    def cross_entropy(self, logits, labels):
        """Mean over cells of ``-log softmax(logits)[label]``; class axis is -3."""
        labels = np.asarray(labels)
        if logits.value.ndim < 3 or logits.shape[:-3] + logits.shape[-2:] != labels.shape:
            raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
        z = np.moveaxis(logits.value, -3, -1)
        shifted = z - z.max(axis=-1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        picked = np.take_along_axis(logp, labels[..., None], axis=-1)
        count = labels.size
        loss = -picked.sum() / count

        def bw(g):
            d = np.exp(logp)
            np.put_along_axis(d, labels[..., None], np.take_along_axis(d, labels[..., None], axis=-1) - 1.0, axis=-1)
            return (np.moveaxis(d * (float(g) / count), -1, -3),)

        return self.record(np.array(loss), (logits,), bw)


def _pad_nhwc(xv):
    n, c, h, wd = xv.shape
    xh = np.zeros((n, h + 2, wd + 2, c), dtype=xv.dtype)
    xh[:, 1:-1, 1:-1, :] = xv.transpose(0, 2, 3, 1)
    return xh


def softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
