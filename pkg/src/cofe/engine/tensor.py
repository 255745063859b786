"""Minimal reverse-mode autodiff over dense numpy arrays.

Tensors are immutable values; ops build a dynamic graph of parent links plus
vector-Jacobian closures. Only scalar-broadcasting is supported (a tensor may
be combined with a python scalar or 0-d tensor); shaped broadcasting must go
through explicit ops (`bias_add`, `reshape`, ...). Every forward op verifies
the result is finite and raises `NonFiniteError` otherwise.

Training paths run in float32; gradient-check oracles use float64.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy import fft as sfft

from ..errors import GraphError, NonFiniteError, ShapeError

_ids = itertools.count()

# kernels at least this wide route through the FFT convolution path, which
# avoids materializing the (N, C, L, K) im2col tensor
FFT_KERNEL_MIN = 32


def _as_array(data, dtype=None):
    a = np.asarray(data)
    if dtype is not None:
        return a.astype(dtype, copy=False)
    if a.dtype in (np.float32, np.float64):
        return a
    return a.astype(np.float32)


class Tensor:
    """Dense real array plus optional grad bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_op", "_parents", "_vjp", "_id")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._op = "leaf"
        self._parents = ()
        self._vjp = None
        self._id = next(_ids)

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(op={self._op}, shape={self.shape}, grad={self.requires_grad})"

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        return backward(self)


def _wrap(other, like):
    if isinstance(other, Tensor):
        return other
    return Tensor(np.asarray(other, dtype=like.dtype))


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t._parents != ()


def _make(op, out_data, parents, vjp):
    """Create the result tensor, recording the graph node when needed."""
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")
    out = Tensor(out_data)
    if any(_tracked(p) for p in parents):
        out._op = op
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _scalar_pair(a, b):
    """Return (kind, ...) where kind identifies scalar-vs-tensor pairing."""
    a_s, b_s = a.size == 1, b.size == 1
    if a.shape == b.shape:
        return "same"
    if a_s or b_s:
        return "scalar"
    return "bad"


# -- elementwise arithmetic ------------------------------------------------

def add(a, b):
    a = a if isinstance(a, Tensor) else _wrap(a, b)
    b = _wrap(b, a)
    kind = _scalar_pair(a, b)
    if kind == "bad":
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = a.data + b.data

    def vjp(g):
        ga = g if g.shape == a.shape else np.sum(g).reshape(a.shape)
        gb = g if g.shape == b.shape else np.sum(g).reshape(b.shape)
        return ga, gb

    return _make("add", out, (a, b), vjp)


def neg(a):
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def sub(a, b):
    if not isinstance(a, Tensor):
        a = _wrap(a, b)
    return add(a, neg(_wrap(b, a)))


def mul(a, b):
    a = a if isinstance(a, Tensor) else _wrap(a, b)
    b = _wrap(b, a)
    kind = _scalar_pair(a, b)
    if kind == "bad":
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    out = a.data * b.data

    def vjp(g):
        ga = g * b.data
        gb = g * a.data
        if ga.shape != a.shape:
            ga = np.sum(ga).reshape(a.shape)
        if gb.shape != b.shape:
            gb = np.sum(gb).reshape(b.shape)
        return ga, gb

    return _make("mul", out, (a, b), vjp)


def bias_add(x, b):
    """x (N,F) + b (F,), or x (N,C,L) + b (C,). The one shaped broadcast."""
    if x.data.ndim == 2 and b.shape == (x.shape[1],):
        out = x.data + b.data

        def vjp(g):
            return g, g.sum(axis=0)

    elif x.data.ndim == 3 and b.shape == (x.shape[1],):
        out = x.data + b.data[None, :, None]

        def vjp(g):
            return g, g.sum(axis=(0, 2))

    else:
        raise ShapeError(f"bias_add: incompatible shapes {x.shape} and {b.shape}")
    return _make("bias_add", out, (x, b), vjp)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = g @ b.data.T if _tracked(a) else None
        gb = a.data.T @ g if _tracked(b) else None
        return ga, gb

    return _make("matmul", out, (a, b), vjp)


# -- activations -------------------------------------------------------------

def relu(x):
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope=0.2):
    mask = x.data > 0
    out = np.where(mask, x.data, slope * x.data)
    return _make("leaky_relu", out, (x,),
                 lambda g: (g * np.where(mask, 1, slope).astype(x.dtype),))


def tanh(x):
    y = np.tanh(x.data)
    return _make("tanh", y, (x,), lambda g: (g * (1 - y * y),))


def sigmoid(x):
    # saturates numerically beyond +-60; clip keeps exp() in range
    y = (1 / (1 + np.exp(-np.clip(x.data, -60, 60)))).astype(x.dtype)
    return _make("sigmoid", y, (x,), lambda g: (g * y * (1 - y),))


def softplus(x):
    y = np.logaddexp(np.zeros((), dtype=x.dtype), x.data)
    s = 1 / (1 + np.exp(-np.clip(x.data, -60, 60)))
    return _make("softplus", y, (x,), lambda g: ((g * s).astype(x.dtype),))


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _make("softmax", y, (x,), vjp)


# -- reductions & structure --------------------------------------------------

def sum_(x, axis=None):
    out = x.data.sum(axis=axis, keepdims=False)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).astype(x.dtype),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make("sum", out, (x,), vjp)


def mean(x, axis=None):
    n = x.size if axis is None else x.shape[axis]
    out = x.data.mean(axis=axis)

    def vjp(g):
        if axis is None:
            return ((np.broadcast_to(g, x.shape) / n).astype(x.dtype),)
        return ((np.broadcast_to(np.expand_dims(g, axis), x.shape) / n).astype(x.dtype),)

    return _make("mean", out, (x,), vjp)


def reshape(x, shape):
    out = x.data.reshape(shape)
    return _make("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def slice_along(x, axis, start, length):
    if start < 0 or start + length > x.shape[axis]:
        raise ShapeError(
            f"slice_along: [{start}:{start + length}] out of bounds for axis "
            f"{axis} of shape {x.shape}")
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = x.data[idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _make("slice", out, (x,), vjp)


def concat(tensors, axis=0):
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        grads = []
        for i in range(len(tensors)):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(idx)])
        return tuple(grads)

    return _make("concat", out, tensors, vjp)


# -- convolutions ------------------------------------------------------------

def _windows(xp, n_out, k, stride):
    """Strided view (N, C, n_out, K) over padded input (N, C, Lp)."""
    n, c, _ = xp.shape
    s0, s1, s2 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, shape=(n, c, n_out, k), strides=(s0, s1, s2 * stride, s2),
        writeable=False)


def _overlap_add(cols, l_total, stride):
    """Inverse of `_windows`: scatter-add (N, C, n_out, K) into (N, C, l_total)."""
    n, c, n_out, k = cols.shape
    out = np.zeros((n, c, l_total), dtype=cols.dtype)
    for j in range(k):
        out[:, :, j:j + n_out * stride:stride] += cols[:, :, :, j]
    return out


def _fft_len(n):
    return sfft.next_fast_len(int(n), real=True)


def _fft_correlate(x, w):
    """y[n,o,t] = sum_{c,k} x[n,c,t+k] * w[o,c,k]; t = 0..Lx-K."""
    lx, k = x.shape[2], w.shape[2]
    m = _fft_len(lx + k - 1)
    xf = sfft.rfft(x, m, axis=2)
    wf = sfft.rfft(w[:, :, ::-1], m, axis=2)
    yf = np.einsum("ncf,ocf->nof", xf, wf)
    y = sfft.irfft(yf, m, axis=2)[:, :, k - 1:lx]
    return np.ascontiguousarray(y.astype(x.dtype))


def _fft_convolve_sum(g, w, l_out):
    """dx[n,c,s] = sum_{o,t} g[n,o,t] * w[o,c,s-t]; s = 0..l_out-1."""
    lg, k = g.shape[2], w.shape[2]
    m = _fft_len(lg + k - 1)
    gf = sfft.rfft(g, m, axis=2)
    wf = sfft.rfft(w, m, axis=2)
    df = np.einsum("nof,ocf->ncf", gf, wf)
    d = sfft.irfft(df, m, axis=2)[:, :, :l_out]
    return np.ascontiguousarray(d.astype(g.dtype))


def _fft_weight_grad(x, g, k):
    """dw[o,c,k] = sum_{n,t} x[n,c,t+k] * g[n,o,t]."""
    lx, lg = x.shape[2], g.shape[2]
    m = _fft_len(lx + lg - 1)
    xf = sfft.rfft(x, m, axis=2)
    gf = sfft.rfft(g[:, :, ::-1], m, axis=2)
    zf = np.einsum("ncf,nof->ocf", xf, gf)
    z = sfft.irfft(zf, m, axis=2)[:, :, lg - 1:lg - 1 + k]
    return np.ascontiguousarray(z.astype(x.dtype))


def conv1d(x, w, bias=None, stride=1, padding=0):
    """x (N,C,L) * w (O,C,K) -> (N,O,L_out), L_out = (L + 2p - K)//s + 1."""
    if x.data.ndim != 3 or w.data.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: shape mismatch {x.shape} vs {w.shape}")
    n, c, l = x.shape
    o, _, k = w.shape
    l_out = (l + 2 * padding - k) // stride + 1
    if l_out < 1:
        raise ShapeError(f"conv1d: kernel {k} too large for input {x.shape} "
                         f"with padding {padding}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    use_fft = k >= FFT_KERNEL_MIN
    if use_fft:
        y_dense = _fft_correlate(xp, w.data)  # stride-1 result
        y = y_dense[:, :, ::stride] if stride > 1 else y_dense
        y = np.ascontiguousarray(y)
        cols = None
    else:
        cols = _windows(xp, l_out, k, stride)
        y = np.tensordot(cols, w.data, axes=([1, 3], [1, 2]))  # (N, L_out, O)
        y = np.ascontiguousarray(y.transpose(0, 2, 1))
    parents = [x, w]
    if bias is not None:
        y = y + bias.data[None, :, None]
        parents.append(bias)

    def vjp(g):
        l_pad = l + 2 * padding
        if use_fft:
            if stride > 1:
                g_dense = np.zeros((n, o, l_pad - k + 1), dtype=g.dtype)
                g_dense[:, :, ::stride] = g
            else:
                g_dense = g
            dw = _fft_weight_grad(xp, g_dense, k).astype(w.dtype) \
                if _tracked(w) else None
            if _tracked(x):
                dxp = _fft_convolve_sum(g_dense, w.data, l_pad)
                dx = dxp[:, :, padding:padding + l] if padding else dxp
            else:
                dx = None
        else:
            dw = np.tensordot(g, cols, axes=([0, 2], [0, 2])).astype(w.dtype) \
                if _tracked(w) else None
            if _tracked(x):
                dcols = np.tensordot(g, w.data, axes=(1, 0))  # (N, L_out, C, K)
                dxp = _overlap_add(dcols.transpose(0, 2, 1, 3), l_pad, stride)
                dx = dxp[:, :, padding:padding + l] if padding else dxp
            else:
                dx = None
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)) if _tracked(bias) else None)
        return tuple(grads)

    return _make("conv1d", y, parents, vjp)


def transposed_conv1d(x, w, bias=None, stride=1, padding=0):
    """x (N,C,L) * w (C,O,K) -> (N,O,L_out), L_out = (L-1)*s + K - 2p."""
    if x.data.ndim != 3 or w.data.ndim != 3 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"transposed_conv1d: shape mismatch {x.shape} vs {w.shape}")
    n, c, l = x.shape
    _, o, k = w.shape
    l_out = (l - 1) * stride + k - 2 * padding
    if l_out < 1:
        raise ShapeError(f"transposed_conv1d: empty output for input {x.shape}")
    cols = np.tensordot(x.data, w.data, axes=(1, 0))  # (N, L, O, K)
    yp = _overlap_add(cols.transpose(0, 2, 1, 3), l_out + 2 * padding, stride)
    y = yp[:, :, padding:padding + l_out] if padding else yp
    parents = [x, w]
    if bias is not None:
        y = y + bias.data[None, :, None]
        parents.append(bias)

    def vjp(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding))) if padding else g
        gcols = _windows(gp, l, k, stride)  # (N, O, L, K)
        if _tracked(x):
            dx = np.tensordot(gcols, w.data, axes=([1, 3], [1, 2]))  # (N, L, C)
            dx = np.ascontiguousarray(dx.transpose(0, 2, 1))
        else:
            dx = None
        dw = np.tensordot(x.data, gcols, axes=([0, 2], [0, 2])).astype(w.dtype) \
            if _tracked(w) else None
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)) if _tracked(bias) else None)
        return tuple(grads)

    return _make("transposed_conv1d", y, parents, vjp)


# -- normalization -----------------------------------------------------------

class BatchNormState:
    """Running statistics for one batch_norm_1d site. Not differentiated."""

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batch_norm_1d(x, gamma, beta, state, training):
    """Per-channel normalization of x (N,C,L) over the (N,L) axes."""
    if x.data.ndim != 3 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm_1d: shape mismatch x={x.shape}, "
                         f"gamma={gamma.shape}, beta={beta.shape}")
    if training:
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        m = state.momentum
        state.running_mean = (m * state.running_mean + (1 - m) * mu).astype(
            state.running_mean.dtype)
        state.running_var = (m * state.running_var + (1 - m) * var).astype(
            state.running_var.dtype)
    else:
        mu = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu[None, :, None]) * inv[None, :, None]
    y = gamma.data[None, :, None] * xhat + beta.data[None, :, None]
    m_count = x.shape[0] * x.shape[2]

    def vjp(g):
        dgamma = (g * xhat).sum(axis=(0, 2))
        dbeta = g.sum(axis=(0, 2))
        if training:
            gi = gamma.data * inv
            dx = (gi[None, :, None] / m_count) * (
                m_count * g
                - dbeta[None, :, None]
                - xhat * ((g * xhat).sum(axis=(0, 2)))[None, :, None])
        else:
            dx = g * (gamma.data * inv)[None, :, None]
        return dx.astype(x.dtype), dgamma.astype(gamma.dtype), dbeta.astype(beta.dtype)

    return _make("batch_norm_1d", y.astype(x.dtype), (x, gamma, beta), vjp)


# -- losses -------------------------------------------------------------------

def cross_entropy(logits, label):
    """Mean negative log-likelihood. logits (C,)+int or (N,C)+(N,) ints."""
    lg = logits.data
    if lg.ndim == 1:
        lg2 = lg[None, :]
        labels = np.asarray([int(label)])
    elif lg.ndim == 2:
        lg2 = lg
        labels = np.asarray(label, dtype=np.int64).reshape(-1)
        if labels.shape[0] != lg2.shape[0]:
            raise ShapeError(f"cross_entropy: {lg2.shape[0]} rows vs "
                             f"{labels.shape[0]} labels")
    else:
        raise ShapeError(f"cross_entropy: logits must be 1-D or 2-D, got {logits.shape}")
    if labels.min() < 0 or labels.max() >= lg2.shape[1]:
        raise ShapeError(f"cross_entropy: label out of range for C={lg2.shape[1]}")
    zmax = lg2.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(lg2 - zmax).sum(axis=1))
    n = lg2.shape[0]
    nll = (lse - lg2[np.arange(n), labels]).mean()
    probs = np.exp(lg2 - lse[:, None])

    def vjp(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1
        d *= g / n
        return (d.astype(logits.dtype).reshape(logits.shape),)

    return _make("cross_entropy", np.asarray(nll, dtype=logits.dtype), (logits,), vjp)


def mse(pred, target):
    target = target if isinstance(target, Tensor) else _wrap(target, pred)
    _check_same_shape("mse", pred, target)
    diff = pred.data - target.data
    out = np.asarray((diff * diff).mean(), dtype=pred.dtype)
    n = pred.size

    def vjp(g):
        d = (2.0 / n) * diff * g
        return d.astype(pred.dtype), (-d).astype(target.dtype)

    return _make("mse", out, (pred, target), vjp)


def l2_norm_sq(x):
    out = np.asarray((x.data * x.data).sum(), dtype=x.dtype)
    return _make("l2_norm_sq", out, (x,), lambda g: ((2.0 * g * x.data).astype(x.dtype),))


# -- backward ------------------------------------------------------------------

def _topo(out):
    order, seen, stack = [], set(), [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order  # parents before children


def trace(out):
    """Topologically ordered op records: (node_id, op, parent_ids)."""
    return [(n._id, n._op, tuple(p._id for p in n._parents)) for n in _topo(out)]


def backward(out):
    """Reverse-mode gradients of a scalar `out` into every requires_grad leaf.

    The graph is consumed: a second backward through the same nodes raises.
    """
    if out.size != 1:
        raise GraphError(f"backward: output must be scalar, got shape {out.shape}")
    if out._parents == () and out._vjp is None and not out.requires_grad:
        raise GraphError("backward: output is detached from any graph")
    order = _topo(out)
    grads = {id(out): np.ones_like(out.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    # consume the graph so activations can be freed
    for node in order:
        if node._parents:
            node._parents = ()
            node._vjp = None
            node._op = "consumed"
