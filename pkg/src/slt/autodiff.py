"""A small reverse-mode automatic differentiation engine over NumPy arrays.

Only what the emulator needs: elementwise arithmetic, batched matmul,
reshaping, reductions, GELU, row softmax, and the spectral ops used by the
translation-equivariant layers.  Spectra travel as real tensors with a
trailing axis of length 2 holding ``(re, im)``, so every gradient is real.

Usage mirrors the familiar define-by-run style::

    w = Tensor(np.random.randn(3, 2), requires_grad=True)
    loss = mean(abs_(matmul(x, w) - y))
    loss.backward()
    w.grad

``backward`` accumulates into ``.grad`` of leaf tensors; call
``zero_grad`` (or :meth:`Adam.zero_grad`) between steps.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
import scipy.fft as sfft
from scipy.special import erf

from .errors import SLTError


class ShapeError(SLTError, ValueError):
    pass


_GRAD_ENABLED = True
# Branch freezing for |x|: during a gradient check the sign pattern recorded at
# the base point is reused so finite differences see the same smooth piece.
_ABS_RECORD = None
_ABS_REPLAY = None


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "name")

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = ()
        self.backward_fn = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self.parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def backward(self, grad=None):
        backward(self, grad)

    __array_priority__ = 100

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, grad=None):
    """Populate ``.grad`` of every leaf that ``loss`` depends on."""
    if not loss.requires_grad:
        raise SLTError("backward called on a tensor that does not require grad")
    if grad is None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    grads = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_check(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- elementwise -----------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def scale(a, c):
    a = as_tensor(a)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def abs_(a):
    """``|a|`` with subgradient 0 at 0."""
    a = as_tensor(a)
    if _ABS_REPLAY is not None:
        sign = _ABS_REPLAY.pop(0)
    else:
        sign = np.sign(a.data)
        if _ABS_RECORD is not None:
            _ABS_RECORD.append(sign)
    return _make(sign * a.data, (a,), lambda g: (g * sign,), "abs")


def gelu(a):
    """Exact GELU, ``x * Phi(x)``."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))

    def bw(g):
        pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        return (g * (cdf + x * pdf),)

    return _make(x * cdf, (a,), bw, "gelu")


def softmax_rows(a):
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - np.sum(g * s, axis=-1, keepdims=True)),)

    return _make(s, (a,), bw, "softmax_rows")


# --- linear algebra and shape ------------------------------------------------


def matmul(a, b):
    """``a @ b`` with ``a: (..., n, k)`` and ``b: (k, m)`` or ``(..., k, m)``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim > 2:
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return _unbroadcast(ga, a.shape), gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def transpose(a, axes=None):
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            i != ax and n != m for i, (n, m) in enumerate(zip(t.shape, ref))
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw, "concat")


def _is_basic(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def slice_(a, index):
    a = as_tensor(a)

    def bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        if _is_basic(index):
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), bw, "slice")


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis, keepdims), 1.0 / count)


# --- spectral ------------------------------------------------------------------


def rfft1(x, n_modes, norm="forward"):
    """Lowest ``n_modes`` rfft coefficients along the last axis as ``(..., n_modes, 2)``.

    ``norm="forward"`` divides by the length (resolution-independent
    coefficients); ``norm="backward"`` is the plain DFT.
    """
    x = as_tensor(x)
    n = x.shape[-1]
    if n_modes > n // 2 + 1:
        raise ShapeError(f"rfft1: {n_modes} modes requested from length {n}")
    c = sfft.rfft(x.data, axis=-1, norm=norm)[..., :n_modes]
    out = np.stack([c.real, c.imag], axis=-1)

    def bw(g):
        full = np.zeros(g.shape[:-2] + (n,), dtype=np.result_type(g.dtype, np.complex64))
        full[..., :n_modes] = g[..., 0] + 1j * g[..., 1]
        # adjoint of the truncated forward DFT
        back = sfft.ifft(full, axis=-1, norm="backward" if norm == "forward" else "forward")
        return (back.real.astype(x.dtype),)

    return _make(out.astype(x.dtype, copy=False), (x,), bw, "rfft1")


def irfft1(spec, length):
    """Real profile of ``length`` points from ``(..., M, 2)`` forward-normalised modes.

    Modes beyond ``M`` are zero; the imaginary part of mode 0 is ignored.
    """
    spec = as_tensor(spec)
    m = spec.shape[-2]
    if spec.shape[-1] != 2 or m > length // 2 + 1:
        raise ShapeError(f"irfft1: spectrum {spec.shape} does not fit length {length}")
    c = spec.data[..., 0] + 1j * spec.data[..., 1]
    out = sfft.irfft(c, n=length, axis=-1, norm="forward")
    w = np.full(m, 2.0)
    w[0] = 1.0
    if length % 2 == 0 and m == length // 2 + 1:
        w[-1] = 1.0

    def bw(g):
        r = sfft.rfft(g, axis=-1)[..., :m] * w
        gr = np.stack([r.real, r.imag], axis=-1)
        gr[..., 0, 1] = 0.0
        if w[-1] == 1.0 and m > 1:
            gr[..., -1, 1] = 0.0
        return (gr.astype(spec.dtype, copy=False),)

    return _make(out.astype(spec.dtype, copy=False), (spec,), bw, "irfft1")


def complex_mode_mix(spec, weights, n_out):
    """Per-mode complex channel mixing with truncation or zero-padding.

    ``spec``: ``(B, C_in, M_in, 2)``; ``weights``: ``(M_w, C_in, C_out, 2)``.
    Output mode ``k < min(M_in, M_w, n_out)`` is ``sum_i X[b, i, k] W[k, i, o]``
    (complex product); higher output modes up to ``n_out`` are zero.
    """
    spec, weights = as_tensor(spec), as_tensor(weights)
    if spec.ndim != 4 or weights.ndim != 4 or spec.shape[-1] != 2 or weights.shape[-1] != 2:
        raise ShapeError(
            f"complex_mode_mix: expected (B, C, M, 2) and (M, C_in, C_out, 2), got "
            f"{spec.shape} and {weights.shape}"
        )
    if spec.shape[1] != weights.shape[1]:
        raise ShapeError(
            f"complex_mode_mix: channel mismatch between {spec.shape} and {weights.shape}"
        )
    k = min(spec.shape[2], weights.shape[0], n_out)
    x = spec.data[..., :k, 0] + 1j * spec.data[..., :k, 1]
    w = weights.data[:k, ..., 0] + 1j * weights.data[:k, ..., 1]
    h = np.einsum("bik,kio->bok", x, w)
    out = np.zeros((spec.shape[0], weights.shape[2], n_out, 2), dtype=spec.dtype)
    out[:, :, :k, 0] = h.real
    out[:, :, :k, 1] = h.imag

    def bw(g):
        gh = g[:, :, :k, 0] + 1j * g[:, :, :k, 1]
        gx = np.einsum("bok,kio->bik", gh, np.conj(w))
        gw = np.einsum("bik,bok->kio", np.conj(x), gh)
        gs = np.zeros(spec.shape, dtype=spec.dtype)
        gs[:, :, :k, 0] = gx.real
        gs[:, :, :k, 1] = gx.imag
        gwr = np.zeros(weights.shape, dtype=weights.dtype)
        gwr[:k, ..., 0] = gw.real
        gwr[:k, ..., 1] = gw.imag
        return gs, gwr

    return _make(out, (spec, weights), bw, "complex_mode_mix")



def phase_rotate(spec, phi, sign):
    """Multiply mode ``k`` of ``(..., M, 2)`` by ``exp(sign * i * k * phi)``.

    ``phi`` broadcasts against ``spec.shape[:-2]`` and may require grad.
    """
    spec, phi = as_tensor(spec), as_tensor(phi)
    m = spec.shape[-2]
    k = np.arange(m, dtype=spec.dtype)
    ang = sign * phi.data[..., None] * k
    cos, sin = np.cos(ang), np.sin(ang)
    xr, xi = spec.data[..., 0], spec.data[..., 1]
    yr = xr * cos - xi * sin
    yi = xr * sin + xi * cos

    def bw(g):
        gr, gi = g[..., 0], g[..., 1]
        gx = np.stack([gr * cos + gi * sin, -gr * sin + gi * cos], axis=-1)
        gphi = None
        if phi.requires_grad:
            gphi = np.sum(sign * k * (gi * yr - gr * yi), axis=-1)
            gphi = _unbroadcast(gphi, phi.shape)
        return gx, gphi

    return _make(np.stack([yr, yi], axis=-1), (spec, phi), bw, "phase_rotate")


def first_mode_phase(x, tol=1e-12, detach=False):
    """Displacement phase ``-arg(c_1)`` of a real profile along the last axis.

    Degenerate profiles (``|c_1| <= tol``) get phase 0 and zero gradient.
    """
    x = as_tensor(x)
    n = x.shape[-1]
    theta = 2.0 * np.pi * np.arange(n) / n
    cos, sin = np.cos(theta), np.sin(theta)
    re = x.data @ cos / n
    im = -(x.data @ sin) / n
    mag2 = re * re + im * im
    degenerate = np.sqrt(mag2) <= tol
    phi = np.where(degenerate, 0.0, np.mod(-np.arctan2(im, re), 2.0 * np.pi)).astype(x.dtype)
    if detach:
        return Tensor(phi)
    safe = np.where(degenerate, 1.0, mag2)

    def bw(g):
        coef = np.where(degenerate, 0.0, g / (n * safe))
        return ((coef * re)[..., None] * sin + (coef * im)[..., None] * cos,)

    return _make(phi, (x,), bw, "first_mode_phase")


def complex_abs(spec):
    """Modulus of ``(..., M, 2)`` spectra; gradient 0 at the origin."""
    spec = as_tensor(spec)
    re, im = spec.data[..., 0], spec.data[..., 1]
    mag = np.sqrt(re * re + im * im)
    safe = np.where(mag > 0, mag, 1.0)

    def bw(g):
        f = np.where(mag > 0, g / safe, 0.0)
        return (np.stack([f * re, f * im], axis=-1),)

    return _make(mag, (spec,), bw, "complex_abs")


# --- optimisation ----------------------------------------------------------------


class Adam:
    """Adam with per-group learning rates and an exponential epoch schedule.

    ``groups`` is a list of ``{"params": [...], "lr": float}`` dicts.  The
    learning rate of a group after ``e`` epochs is ``lr0 * decay**e``.
    """

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8, decay=1.0):
        self.groups = [dict(g, lr0=g["lr"]) for g in groups]
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.decay = decay
        self.t = 0
        self.epoch = 0
        self.m = {}
        self.v = {}
        for g in self.groups:
            for p in g["params"]:
                self.m[id(p)] = np.zeros_like(p.data)
                self.v[id(p)] = np.zeros_like(p.data)

    @property
    def params(self):
        return [p for g in self.groups for p in g["params"]]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def set_epoch(self, epoch):
        self.epoch = epoch
        for g in self.groups:
            g["lr"] = g["lr0"] * self.decay**epoch

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for g in self.groups:
            lr = g["lr"]
            for p in g["params"]:
                if p.grad is None:
                    continue
                m, v = self.m[id(p)], self.v[id(p)]
                m *= b1
                m += (1.0 - b1) * p.grad
                v *= b2
                v += (1.0 - b2) * p.grad * p.grad
                p.data = p.data - (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def state_dict(self):
        return {
            "t": self.t,
            "epoch": self.epoch,
            "lr": [g["lr"] for g in self.groups],
        }


# --- verification ----------------------------------------------------------------


@contextlib.contextmanager
def _record_abs():
    global _ABS_RECORD
    _ABS_RECORD = []
    try:
        yield _ABS_RECORD
    finally:
        _ABS_RECORD = None


@contextlib.contextmanager
def _replay_abs(signs):
    global _ABS_REPLAY
    _ABS_REPLAY = list(signs)
    try:
        yield
    finally:
        _ABS_REPLAY = None


def grad_check(f, params, h=1e-6, floor=None, return_details=False):
    """Compare backward gradients of ``f()`` with central differences.

    ``f`` takes no arguments and returns a scalar :class:`Tensor` built from
    ``params``.  Each coordinate is perturbed by ``h * max(1, |p|)``.  Signs of
    every ``|x|`` in the graph are frozen at the base point, so the finite
    differences stay on the branch whose (sub)gradient backward reports; at an
    exact kink that branch is the zero subgradient.

    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``;
    ``floor`` defaults to ``1e-4`` times the largest gradient component:
    central differences with ``h = 1e-6`` carry a roundoff error of about
    ``eps * |f| / h`` (a few ``1e-10`` for an O(1) loss), which swamps the
    relative error of components far below the largest one.  Returns the
    maximum over all coordinates.
    """
    for p in params:
        p.grad = None
    with _record_abs() as signs:
        loss = f()
    signs = list(signs)
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    numeric = [np.zeros_like(p.data) for p in params]
    with no_grad():
        for p, num in zip(params, numeric):
            flat = p.data.reshape(-1)
            out = num.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                step = h * max(1.0, abs(orig))
                flat[i] = orig + step
                with _replay_abs(signs):
                    fp = f().item()
                flat[i] = orig - step
                with _replay_abs(signs):
                    fm = f().item()
                flat[i] = orig
                out[i] = (fp - fm) / (2.0 * step)
    a = np.concatenate([x.ravel() for x in analytic])
    n = np.concatenate([x.ravel() for x in numeric])
    if floor is None:
        floor = 1e-4 * max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-300)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    rel = np.abs(a - n) / np.where(denom > 0, denom, 1.0)
    err = float(rel.max(initial=0.0))
    if return_details:
        return err, a, n
    return err
