"""Dense float64 arrays with reverse-mode differentiation.

Every value flowing through the pipeline is a ``Tensor`` wrapping a C-order
float64 numpy array.  Operations on tensors record their inputs and a
backward rule on the output node; ``Tensor.backward()`` replays the recorded
graph once in reverse topological order, accumulating gradients additively
across fan-out.  Tensors whose inputs carry no gradient requirement record
nothing, so inference runs tape-free.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, GradCheckError

Array = np.ndarray


class Tensor:
    """n-dimensional float64 array, optionally participating in the tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], tuple[Array | None, ...]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Convenience arithmetic; constants are lifted to plain tensors.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output.

        Visits each recorded node exactly once in reverse topological order;
        a parent reached through several paths receives the sum of all path
        gradients.
        """
        if self.size != 1:
            raise DimensionError(
                f"backward() requires a scalar output, got shape {self.shape}"
            )
        order = topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    # Non-inplace: backward rules may hand out shared buffers.
                    parent.grad = parent.grad + g


def topo_order(root: Tensor) -> list[Tensor]:
    """Recorded nodes reachable from ``root``, parents before children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: Array, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(-g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data - b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        ga = _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        ga = _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None
        gb = (
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
            if b.requires_grad
            else None
        )
        return ga, gb

    return _node(a.data / b.data, (a, b), backward)


def pow_const(a: Tensor, exponent: float) -> Tensor:
    def backward(g):
        return (g * exponent * np.power(a.data, exponent - 1.0),)

    return _node(np.power(a.data, exponent), (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        return (g * out_data,)

    return _node(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        return (g / a.data,)

    return _node(np.log(a.data), (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g):
        return (g / (2.0 * out_data),)

    return _node(out_data, (a,), backward)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes through wherever lo <= x <= hi."""
    mask = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        return (g * mask,)

    return _node(np.clip(a.data, lo, hi), (a,), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.data.shape).copy(),)

    return _node(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape

    def backward(g):
        return (g.reshape(old),)

    return _node(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got shape {a.shape}")

    def backward(g):
        return (g.T.copy(),)

    return _node(a.data.T.copy(), (a,), backward)


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _node(np.ascontiguousarray(a.data.transpose(axes)), (a,), backward)


def getitem(a: Tensor, index) -> Tensor:
    """Basic (slice/integer) indexing; backward scatters into a zero buffer."""

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _node(a.data[index].copy(), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        grads = []
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, stop)
                grads.append(g[tuple(sl)].copy())
            else:
                grads.append(None)
        return tuple(grads)

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul shapes do not conform: {a.data.shape} x {b.data.shape}"
        )

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight.T (+ bias); weight is [out x in], x is [... x in]."""
    out = matmul(x, transpose(weight))
    if bias is not None:
        out = add(out, bias)
    return out


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _sigmoid_data(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out_data = _sigmoid_data(a.data)

    def backward(g):
        return (g * out_data * (1.0 - out_data),)

    return _node(out_data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out_data * out_data),)

    return _node(out_data, (a,), backward)


def swish(a: Tensor) -> Tensor:
    sig = _sigmoid_data(a.data)
    out_data = a.data * sig

    def backward(g):
        return (g * (sig + out_data * (1.0 - sig)),)

    return _node(out_data, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return ((g - dot) * out_data,)

    return _node(out_data, (a,), backward)


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "swish": swish}


def activations(x: Tensor, kind: str, axis: int | None = None) -> Tensor:
    """Dispatch by name; softmax additionally requires ``axis``."""
    if kind == "softmax":
        if axis is None:
            raise ConfigurationError("softmax requires an axis argument")
        return softmax(x, axis=axis)
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown activation kind {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------

def dropout(x: Tensor, rate: float, training: bool, rng) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate); identity at inference.

    ``rng`` is a numpy Generator or an integer seed.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return _node(x.data.copy(), (x,), lambda g: (g,))
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    scale = 1.0 / (1.0 - rate)
    mask = (rng.random(x.data.shape) >= rate) * scale

    def backward(g):
        return (g * mask,)

    return _node(x.data * mask, (x,), backward)


# ---------------------------------------------------------------------------
# convolution and resampling
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of a [C,H,W] input with [O,C,kh,kw] kernels.

    Output spatial extent is (H + 2*padding - kh) // stride + 1 per side;
    a non-positive extent raises ConfigurationError.
    """
    if x.data.ndim != 3 or kernels.data.ndim != 4:
        raise DimensionError(
            f"conv2d expects [C,H,W] input and [O,C,kh,kw] kernels, got"
            f" {x.data.shape} and {kernels.data.shape}"
        )
    c_in, h, w = x.data.shape
    c_out, kc, kh, kw = kernels.data.shape
    if kc != c_in:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.data.shape} vs kernels"
            f" {kernels.data.shape}"
        )
    h2 = (h + 2 * padding - kh) // stride + 1
    w2 = (w + 2 * padding - kw) // stride + 1
    if h2 <= 0 or w2 <= 0:
        raise ConfigurationError(
            f"conv2d output extent {h2}x{w2} is non-positive for input"
            f" {h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )
    if padding:
        padded = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    else:
        padded = x.data

    cols = np.empty((c_in * kh * kw, h2 * w2))
    row = 0
    for ky in range(kh):
        for kx in range(kw):
            patch = padded[:, ky : ky + stride * h2 : stride, kx : kx + stride * w2 : stride]
            cols[row : row + c_in] = patch.reshape(c_in, -1)
            row += c_in
    # cols rows are ordered (ky, kx, c); permute kernel axes to match.
    k_perm = kernels.data.transpose(0, 2, 3, 1).reshape(c_out, -1)
    out_data = (k_perm @ cols).reshape(c_out, h2, w2)

    def backward(g):
        g2d = g.reshape(c_out, -1)
        gk = gx = None
        if kernels.requires_grad:
            gk_perm = g2d @ cols.T  # [O, kh*kw*C]
            gk = gk_perm.reshape(c_out, kh, kw, c_in).transpose(0, 3, 1, 2).copy()
        if x.requires_grad:
            dcols = k_perm.T @ g2d  # [kh*kw*C, H2*W2]
            gpad = np.zeros_like(padded)
            r = 0
            for ky in range(kh):
                for kx in range(kw):
                    block = dcols[r : r + c_in].reshape(c_in, h2, w2)
                    gpad[:, ky : ky + stride * h2 : stride, kx : kx + stride * w2 : stride] += block
                    r += c_in
            gx = gpad[:, padding : padding + h, padding : padding + w].copy() if padding else gpad
        return gx, gk

    return _node(out_data, (x, kernels), backward)


def _resize_axis_coords(n_in: int, n_out: int):
    """Corner-aligned sample coordinates with floor/ceil indices and weights."""
    if n_out > 1:
        coords = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    else:
        coords = np.zeros(1)
    lo = np.floor(coords).astype(np.intp)
    lo = np.minimum(lo, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = coords - lo
    return lo, hi, frac


def bilinear_resize(x: Tensor, target: tuple[int, int]) -> Tensor:
    """Resize a [C,H,W] tensor to [C,h2,w2] with corner-aligned bilinear sampling."""
    if x.data.ndim != 3:
        raise DimensionError(f"bilinear_resize expects [C,H,W], got {x.data.shape}")
    h2, w2 = target
    if h2 < 1 or w2 < 1:
        raise ConfigurationError(f"target size must be >= 1, got {target}")
    _, h, w = x.data.shape
    y0, y1, fy = _resize_axis_coords(h, h2)
    x0, x1, fx = _resize_axis_coords(w, w2)
    wy0, wy1 = (1.0 - fy)[:, None], fy[:, None]
    wx0, wx1 = (1.0 - fx)[None, :], fx[None, :]

    def gather(rows, cols_):
        return x.data[:, rows[:, None], cols_[None, :]]

    out_data = (
        gather(y0, x0) * (wy0 * wx0)
        + gather(y0, x1) * (wy0 * wx1)
        + gather(y1, x0) * (wy1 * wx0)
        + gather(y1, x1) * (wy1 * wx1)
    )

    def backward(g):
        gx = np.zeros_like(x.data)
        for rows, cols_, wgt in (
            (y0, x0, wy0 * wx0),
            (y0, x1, wy0 * wx1),
            (y1, x0, wy1 * wx0),
            (y1, x1, wy1 * wx1),
        ):
            np.add.at(gx, (slice(None), rows[:, None], cols_[None, :]), g * wgt)
        return (gx,)

    return _node(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor] | Iterable[tuple[str, Tensor]],
    epsilon: float = 1e-6,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic scalar-valued function of ``params`` (fix
    all RNG seeds before calling).  For each parameter the error is
    |analytic - numeric| / max(1, |numeric|), maximised over checked
    coordinates.  Large parameters can be subsampled with ``max_coords``;
    all coordinates are checked when it is None.
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ConfigurationError(f"epsilon must be in [1e-7, 1e-3], got {epsilon}")
    params = dict(params)
    if rng is None:
        rng = np.random.default_rng(0)

    for p in params.values():
        p.zero_grad()
    out = f()
    if out.size != 1:
        raise GradCheckError(f"f must be scalar-valued, got shape {out.shape}")
    out.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = f().item()
            flat[i] = orig - epsilon
            f_minus = f().item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise GradCheckError(
                    f"non-finite objective while perturbing parameter {name!r}"
                )
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            err = abs(a_flat[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst
