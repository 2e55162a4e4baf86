"""Minimal dense-tensor reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array and records the primitive application that
produced it.  Calling :meth:`Tensor.backward` walks the recorded graph in
reverse topological order and accumulates gradients additively into every
``requires_grad`` leaf.  Gradient buffers are never zeroed implicitly; the
training loop owns that.

Shape discipline: no broadcasting except scalar-with-tensor.  All other
alignment is explicit through named ops (``expand``, ``add_bias``, ...), so a
shape mismatch always fails loudly with the offending primitive named.

Tests exercise the engine in float64; training may run in float32.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy a primitive's signature."""


class GraphError(RuntimeError):
    """Raised on invalid graph usage (e.g. backward from a bad seed)."""


def _is_scalar_shape(shape):
    return int(np.prod(shape, dtype=np.int64)) == 1


class Tensor:
    """Dense real-valued tensor participating in a reverse-mode graph.

    data : numpy array (float32 or float64)
    requires_grad : whether gradients should be accumulated into ``grad``
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._bwd = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data, parents, bwd, op):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._bwd = bwd
        else:
            # constant subgraphs are detached eagerly to keep graphs small
            out.requires_grad = False
            out._parents = ()
            out._bwd = None
        return out

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
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- backward -------------------------------------------------------------

    def backward(self, seed=None):
        """Accumulate gradients of ``self`` into every requires_grad leaf.

        ``seed`` must match this tensor's shape; it defaults to 1 for
        single-element outputs and is an error otherwise.
        """
        if not self.requires_grad:
            raise GraphError("backward: tensor does not require grad (no graph recorded)")
        if seed is None:
            if self.size != 1:
                raise GraphError(
                    f"backward: seed required for non-scalar output of shape {self.shape}")
            seed_arr = np.ones_like(self.data)
        else:
            seed_arr = np.asarray(seed, dtype=self.data.dtype)
            if seed_arr.shape != self.shape:
                raise ShapeError(
                    f"backward: seed shape {seed_arr.shape} != output shape {self.shape}")

        order = self._toposort()
        grads = {id(self): seed_arr}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._bwd is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._bwd(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def _toposort(self):
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return order

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other, self.dtype))

    def __radd__(self, other):
        return add(_coerce(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self.dtype))

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self.dtype))

    def __rmul__(self, other):
        return mul(_coerce(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _coerce(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_coerce(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _coerce(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_same_dtype(op, *ts):
    dt = ts[0].dtype
    for t in ts[1:]:
        if t.dtype != dt:
            raise ShapeError(f"{op}: mixed dtypes {dt} and {t.dtype}")
    return dt


# ---------------------------------------------------------------------------
# elementwise binary ops (scalar-with-tensor broadcast only)
# ---------------------------------------------------------------------------

def _binary_shapes(op, a, b):
    if a.shape == b.shape:
        return a.shape
    if _is_scalar_shape(a.shape) or _is_scalar_shape(b.shape):
        return b.shape if _is_scalar_shape(a.shape) else a.shape
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match "
                     "(only scalar-with-tensor broadcast is allowed)")


def _reduce_to(grad, shape):
    # inverse of the scalar broadcast: collapse back to the scalar operand
    if grad.shape == shape:
        return grad
    return grad.sum().reshape(shape)


def add(a, b):
    _check_same_dtype("add", a, b)
    _binary_shapes("add", a, b)
    out = a.data + b.data

    def bwd(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return Tensor._from_op(out, (a, b), bwd, "add")


def sub(a, b):
    _check_same_dtype("sub", a, b)
    _binary_shapes("sub", a, b)
    out = a.data - b.data

    def bwd(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return Tensor._from_op(out, (a, b), bwd, "sub")


def mul(a, b):
    _check_same_dtype("mul", a, b)
    _binary_shapes("mul", a, b)
    out = a.data * b.data

    def bwd(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return Tensor._from_op(out, (a, b), bwd, "mul")


def div(a, b):
    _check_same_dtype("div", a, b)
    _binary_shapes("div", a, b)
    out = a.data / b.data

    def bwd(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _reduce_to(ga, a.shape), _reduce_to(gb, b.shape)

    return Tensor._from_op(out, (a, b), bwd, "div")


def neg(a):
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


# ---------------------------------------------------------------------------
# elementwise unary ops
# ---------------------------------------------------------------------------

def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    s = _stable_sigmoid(a.data)
    return Tensor._from_op(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(a):
    s = _stable_sigmoid(a.data)
    out = a.data * s

    def bwd(g):
        # d/dx x*sigmoid(x) = sigmoid(x) * (1 + x*(1 - sigmoid(x)))
        return (g * s * (1.0 + a.data * (1.0 - s)),)

    return Tensor._from_op(out, (a,), bwd, "silu")


def softplus(a):
    out = np.logaddexp(np.zeros((), dtype=a.dtype), a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * _stable_sigmoid(a.data),), "softplus")


def exp(a):
    e = np.exp(a.data)
    return Tensor._from_op(e, (a,), lambda g: (g * e,), "exp")


def log(a):
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a):
    t = np.tanh(a.data)
    return Tensor._from_op(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def relu(a):
    mask = a.data > 0
    return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def clip(a, lo, hi):
    """Clamp values to [lo, hi]; gradient passes only where unclamped."""
    mask = (a.data >= lo) & (a.data <= hi)
    return Tensor._from_op(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,), "clip")


def power(a, p):
    """Elementwise a**p for a constant real exponent p."""
    out = a.data ** p
    return Tensor._from_op(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),), "power")


def absolute(a):
    sign = np.sign(a.data)
    return Tensor._from_op(np.abs(a.data), (a,), lambda g: (g * sign,), "absolute")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        gk = g if keepdims else np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(gk, a.shape).copy(),)

    return Tensor._from_op(np.asarray(out, dtype=a.dtype), (a,), bwd, "sum")


def tmean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bwd(g):
        gk = g if keepdims else np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(gk, a.shape).copy() / count,)

    return Tensor._from_op(np.asarray(out, dtype=a.dtype), (a,), bwd, "mean")


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------

def reshape(a, shape):
    if isinstance(shape, int):
        shape = (shape,)
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape
    return Tensor._from_op(a.data.reshape(shape), (a,),
                           lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                           lambda g: (g.transpose(inv),), "transpose")


def flip(a, axis):
    return Tensor._from_op(np.flip(a.data, axis).copy(), (a,),
                           lambda g: (np.flip(g, axis),), "flip")


def expand(a, axis, n):
    """Insert a new axis of extent n by repetition (explicit shape alignment)."""
    out = np.repeat(np.expand_dims(a.data, axis), n, axis=axis)
    return Tensor._from_op(out, (a,), lambda g: (g.sum(axis=axis),), "expand")


def narrow(a, axis, start, length):
    """Slice ``length`` elements from ``start`` along ``axis``."""
    axis = axis % a.ndim
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow: [{start}:{start + length}] out of range for axis "
                         f"{axis} of shape {a.shape}")
    idx = tuple(slice(None) if i != axis else slice(start, start + length)
                for i in range(a.ndim))

    def bwd(g):
        gx = np.zeros_like(a.data)
        gx[idx] = g
        return (gx,)

    return Tensor._from_op(a.data[idx].copy(), (a,), bwd, "narrow")


def concat(tensors, axis=0):
    if not tensors:
        raise ShapeError("concat: needs at least one tensor")
    _check_same_dtype("concat", *tensors)
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
                i != axis and t.shape[i] != tensors[0].shape[i] for i in range(t.ndim)):
            raise ShapeError(f"concat: incompatible shapes "
                             f"{[t.shape for t in tensors]} along axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def bwd(g):
        pieces = []
        ofs = 0
        for s in sizes:
            idx = tuple(slice(None) if i != axis else slice(ofs, ofs + s)
                        for i in range(g.ndim))
            pieces.append(g[idx])
            ofs += s
        return tuple(pieces)

    return Tensor._from_op(out, tuple(tensors), bwd, "concat")


def stack(tensors, axis=0):
    if not tensors:
        raise ShapeError("stack: needs at least one tensor")
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError(f"stack: shapes {[t.shape for t in tensors]} differ")
    out = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._from_op(out, tuple(tensors), bwd, "stack")


# ---------------------------------------------------------------------------
# linear algebra and bias
# ---------------------------------------------------------------------------

def matmul(a, b):
    _check_same_dtype("matmul", a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} @ {b.shape} are not (m,k)@(k,n)")
    out = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._from_op(out, (a, b), bwd, "matmul")


def add_bias(x, b):
    """Add ``b`` over the trailing dims of ``x`` (explicit alignment op)."""
    _check_same_dtype("add_bias", x, b)
    if x.shape[x.ndim - b.ndim:] != b.shape:
        raise ShapeError(f"add_bias: bias {b.shape} does not match trailing dims of {x.shape}")
    lead = tuple(range(x.ndim - b.ndim))

    def bwd(g):
        return g, g.sum(axis=lead) if lead else g

    return Tensor._from_op(x.data + b.data, (x, b), bwd, "add_bias")


# ---------------------------------------------------------------------------
# convolutions and pooling
# ---------------------------------------------------------------------------

def conv1d(x, w, b=None, groups=1, causal=False):
    """1-D convolution (cross-correlation) over (C_in, L) with same-length output.

    w has shape (C_out, C_in // groups, K).  Causal mode pads K-1 on the left
    so output frame l sees inputs <= l only; otherwise padding is centered.
    """
    _check_same_dtype("conv1d", x, w)
    if x.ndim != 2 or w.ndim != 3:
        raise ShapeError(f"conv1d: x {x.shape} and w {w.shape} must be (C,L) and (O,C/g,K)")
    c_in, length = x.shape
    c_out, c_per_g, k = w.shape
    if c_in % groups or c_out % groups or c_per_g != c_in // groups:
        raise ShapeError(f"conv1d: x {x.shape}, w {w.shape} inconsistent with groups={groups}")
    pad_l, pad_r = (k - 1, 0) if causal else ((k - 1) // 2, k // 2)
    xp = np.pad(x.data, ((0, 0), (pad_l, pad_r)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)  # (C_in, L, K)

    depthwise = groups == c_in == c_out
    if depthwise:
        out = np.einsum("clk,ck->cl", win, w.data[:, 0, :], optimize=True)
    else:
        out = np.empty((c_out, length), dtype=x.dtype)
        og = c_out // groups
        for gi in range(groups):
            cs, os_ = gi * c_per_g, gi * og
            out[os_:os_ + og] = np.einsum("clk,ock->ol", win[cs:cs + c_per_g],
                                          w.data[os_:os_ + og], optimize=True)
    if b is not None:
        _check_same_dtype("conv1d", x, b)
        if b.shape != (c_out,):
            raise ShapeError(f"conv1d: bias {b.shape} != ({c_out},)")
        out = out + b.data[:, None]

    def bwd(g):
        gxp = np.zeros_like(xp)
        if depthwise:
            gw = np.einsum("cl,clk->ck", g, win, optimize=True)[:, None, :]
            for kk in range(k):
                gxp[:, kk:kk + length] += w.data[:, 0, kk, None] * g
        else:
            gw = np.empty_like(w.data)
            og = c_out // groups
            for gi in range(groups):
                cs, os_ = gi * c_per_g, gi * og
                gw[os_:os_ + og] = np.einsum("ol,clk->ock", g[os_:os_ + og],
                                             win[cs:cs + c_per_g], optimize=True)
                for kk in range(k):
                    gxp[cs:cs + c_per_g, kk:kk + length] += np.einsum(
                        "oc,ol->cl", w.data[os_:os_ + og, :, kk], g[os_:os_ + og])
        gx = gxp[:, pad_l:pad_l + length] if pad_r == 0 else gxp[:, pad_l:-pad_r]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=1)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(out, parents, bwd, "conv1d")


def conv2d(x, w, b=None, padding=1):
    """2-D convolution over (C_in, H, W) via im2col; default 3x3 / padding 1."""
    _check_same_dtype("conv2d", x, w)
    if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"conv2d: x {x.shape} and w {w.shape} must be (C,H,W), (O,C,kh,kw)")
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    ho, wo = h + 2 * padding - kh + 1, wd + 2 * padding - kw + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel ({kh},{kw})")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c_in * kh * kw)
    wmat = w.data.reshape(c_out, -1)
    out = (cols @ wmat.T).T.reshape(c_out, ho, wo)
    if b is not None:
        _check_same_dtype("conv2d", x, b)
        if b.shape != (c_out,):
            raise ShapeError(f"conv2d: bias {b.shape} != ({c_out},)")
        out = out + b.data[:, None, None]

    def bwd(g):
        gmat = g.reshape(c_out, -1)            # (C_out, HoWo)
        gw = (gmat @ cols).reshape(w.shape)
        gcols = (gmat.T @ wmat).reshape(ho, wo, c_in, kh, kw).transpose(2, 0, 1, 3, 4)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + ho, j:j + wo] += gcols[:, :, :, i, j]
        gx = gxp[:, padding:padding + h, padding:padding + wd]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(out, parents, bwd, "conv2d")


def avg_pool2d(x, pool):
    """Average pooling over (C, H, W); H and W must divide the pool factors."""
    pt, pf = pool
    c, h, wd = x.shape
    if h % pt or wd % pf:
        raise ShapeError(f"avg_pool2d: input {x.shape} not divisible by pool ({pt},{pf})")
    r = reshape(x, (c, h // pt, pt, wd // pf, pf))
    return tmean(r, axis=(2, 4))


def batch_norm2d(x, gamma, beta, mean=None, var=None, eps=1e-5):
    """Per-channel normalization of (C, H, W).

    Training mode (mean/var None) normalizes by the batch statistics of this
    input and differentiates through them; inference mode uses the provided
    running statistics as constants.
    """
    _check_same_dtype("batch_norm2d", x, gamma, beta)
    c = x.shape[0]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm2d: affine shapes {gamma.shape}/{beta.shape} != ({c},)")
    m = x.shape[1] * x.shape[2]

    if mean is None:
        mu = x.data.mean(axis=(1, 2))
        v = x.data.var(axis=(1, 2))
        inv = 1.0 / np.sqrt(v + eps)
        xhat = (x.data - mu[:, None, None]) * inv[:, None, None]
        out = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

        def bwd(g):
            gbeta = g.sum(axis=(1, 2))
            ggamma = (g * xhat).sum(axis=(1, 2))
            gx = (gamma.data * inv)[:, None, None] / m * (
                m * g
                - gbeta[:, None, None]
                - xhat * ggamma[:, None, None])
            return gx, ggamma, gbeta

        t = Tensor._from_op(out, (x, gamma, beta), bwd, "batch_norm2d")
        # expose the batch stats so module wrappers can update running buffers
        return t, mu, v

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[:, None, None]) * inv[:, None, None]
    out = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def bwd(g):
        return (g * (gamma.data * inv)[:, None, None],
                (g * xhat).sum(axis=(1, 2)),
                g.sum(axis=(1, 2)))

    return Tensor._from_op(out, (x, gamma, beta), bwd, "batch_norm2d")


# ---------------------------------------------------------------------------
# branch mixing (learnable soft connections across task branches)
# ---------------------------------------------------------------------------

def mix_branches(alpha, xs):
    """Mix a stacked (B, ...) tensor of branch activations by a (B, B) matrix.

    out[i] = sum_j alpha[i, j] * xs[j], applied at every element position.
    """
    _check_same_dtype("mix_branches", alpha, xs)
    nb = xs.shape[0]
    if alpha.shape != (nb, nb):
        raise ShapeError(f"mix_branches: alpha {alpha.shape} != ({nb},{nb}) "
                         f"for stacked input {xs.shape}")
    out = np.tensordot(alpha.data, xs.data, axes=1)

    def bwd(g):
        galpha = np.tensordot(g.reshape(nb, -1), xs.data.reshape(nb, -1).T, axes=1)
        gxs = np.tensordot(alpha.data.T, g, axes=1)
        return galpha, gxs

    return Tensor._from_op(out, (alpha, xs), bwd, "mix_branches")


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def finite_diff_check(f, point, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a list of Tensors to a scalar Tensor; ``point`` is a list of
    numpy arrays.  Relative error per coordinate is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"finite_diff_check: eps {eps} outside (0, 1e-2]")
    point = [np.asarray(p, dtype=np.float64) for p in point]

    leaves = [Tensor(p.copy(), requires_grad=True) for p in point]
    out = f(leaves)
    if out.size != 1:
        raise ShapeError(f"finite_diff_check: f returned shape {out.shape}, expected scalar")
    out.backward()
    analytic = [lf.grad if lf.grad is not None else np.zeros_like(lf.data) for lf in leaves]

    def eval_at(arrays):
        val = f([Tensor(a) for a in arrays])
        return float(val.data)

    max_err = 0.0
    for i, p in enumerate(point):
        flat = p.reshape(-1)
        for j in range(flat.size):
            bumped = [q.copy() for q in point]
            bumped[i].reshape(-1)[j] = flat[j] + eps
            f_plus = eval_at(bumped)
            bumped[i].reshape(-1)[j] = flat[j] - eps
            f_minus = eval_at(bumped)
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[i].reshape(-1)[j]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            max_err = max(max_err, err)
    return max_err
