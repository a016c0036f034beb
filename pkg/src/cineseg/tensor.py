"""Dense float64 tensors with tape-based reverse-mode differentiation.

Ops executed while gradients are enabled append a node to the active
:class:`Tape`. Nodes are recorded in execution order, so the tape is already
topologically sorted and :func:`backward` only has to walk it in reverse.

    >>> x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2), requires_grad=True)
    >>> with Tape():
    ...     loss = sum_all(x * x)
    ...     backward(loss)
    >>> x.grad.ravel().tolist()
    [0.0, 2.0, 4.0, 6.0]
"""

import threading

import numpy as np

from . import kernels
from .errors import ContractError, ShapeError, StateError

_local = threading.local()


def _stack():
    if not hasattr(_local, "tapes"):
        _local.tapes = []
        _local.default = Tape()
        _local.grad_enabled = True
    return _local


class Tape:
    """Ordered record of differentiable ops for one forward pass."""

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def record(self, node):
        if self.consumed:
            # a fresh forward pass after backward starts a new graph
            self.reset()
        node.tape = self
        self.nodes.append(node)

    def reset(self):
        self.nodes = []
        self.consumed = False

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _stack().tapes.append(self)
        return self

    def __exit__(self, *exc):
        _stack().tapes.pop()
        return False


def current_tape():
    st = _stack()
    return st.tapes[-1] if st.tapes else st.default


class no_grad:
    """Context manager that disables tape recording on this thread."""

    def __enter__(self):
        st = _stack()
        self._prev = st.grad_enabled
        st.grad_enabled = False

    def __exit__(self, *exc):
        _stack().grad_enabled = self._prev
        return False


def grad_enabled():
    return _stack().grad_enabled


class _Node:
    __slots__ = ("inputs", "output", "backward", "op", "tape")

    def __init__(self, inputs, output, backward, op):
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.op = op
        self.tape = None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, inputs, backward, op):
    out = Tensor(data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = _Node(inputs, out, backward, op)
        current_tape().record(node)
        out._node = node
    return out


def _require_4d(x, op):
    if x.ndim != 4:
        raise ShapeError(f"{op} expects a 4-D (n, c, h, w) tensor, got shape {x.shape}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic -------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), bw, "div")


def reshape(x, shape):
    x = as_tensor(x)

    def bw(g):
        return (g.reshape(x.shape),)

    return _make(x.data.reshape(shape), (x,), bw, "reshape")


def sum_axes(x, axes):
    """Sum over ``axes`` keeping dims, so 4-D tensors stay 4-D."""
    x = as_tensor(x)

    def bw(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(x.data.sum(axis=axes, keepdims=True), (x,), bw, "sum")


def sum_all(x):
    x = as_tensor(x)
    return reshape(sum_axes(x, tuple(range(x.ndim))), (1, 1, 1, 1))


def mean_all(x):
    x = as_tensor(x)
    return mul(sum_all(x), 1.0 / x.size)


# -- activations -------------------------------------------------------------


def elu(x, alpha=1.0):
    if alpha <= 0:
        raise ContractError(f"elu alpha must be positive, got {alpha}")
    pos = x.data > 0
    ex = np.exp(np.minimum(x.data, 0.0))
    out = np.where(pos, x.data, alpha * (ex - 1.0))

    def bw(g):
        return (g * np.where(pos, 1.0, alpha * ex),)

    return _make(out, (x,), bw, "elu")


def relu(x):
    pos = x.data > 0

    def bw(g):
        return (g * pos,)

    return _make(np.where(pos, x.data, 0.0), (x,), bw, "relu")


def sigmoid(x):
    out = _sigmoid(x.data)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), bw, "sigmoid")


def _sigmoid(z):
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def bce_with_logits(logits, target):
    """Elementwise binary cross-entropy on logits; ``target`` is a constant."""
    z = logits.data
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if t.shape != z.shape:
        raise ShapeError(f"bce target shape {t.shape} != logits shape {z.shape}")
    out = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))

    def bw(g):
        return (g * (_sigmoid(z) - t),)

    return _make(out, (logits,), bw, "bce")


# -- spatial ops -------------------------------------------------------------


def _same_pad(k):
    top = (k - 1) // 2
    return top, k - 1 - top


def conv2d(x, weight, bias=None, padding="valid"):
    """2-D cross-correlation, stride 1.

    ``same`` padding zero-pads by k-1 in total; with even kernels the extra
    row and column go to the bottom and right.
    """
    _require_4d(x, "conv2d")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d weight must be (co, ci, k, k), got {weight.shape}")
    n, ci, h, w = x.shape
    co, wci, k, _ = weight.shape
    if wci != ci:
        raise ShapeError(f"conv2d input has {ci} channels but weight expects {wci}")
    if k < 1:
        raise ShapeError("conv2d kernel size must be >= 1")
    if bias is not None and bias.shape != (co,):
        raise ShapeError(f"conv2d bias must have shape ({co},), got {bias.shape}")
    if padding == "same":
        top, bot = _same_pad(k)
        xp = np.pad(x.data, ((0, 0), (0, 0), (top, bot), (top, bot))) if k > 1 else x.data
    elif padding == "valid":
        if h < k or w < k:
            raise ShapeError(f"valid conv2d needs input at least {k}x{k}, got {h}x{w}")
        top = 0
        xp = x.data
    else:
        raise ContractError(f"padding must be 'valid' or 'same', got {padding!r}")
    hp, wp = xp.shape[2:]
    ho, wo = hp - k + 1, wp - k + 1
    cols = kernels.im2col(xp, k)
    wm = weight.data.reshape(co, ci * k * k)
    out = wm @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(co, n, ho, wo).transpose(1, 0, 2, 3))

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(co, -1)
        dw = (g2 @ cols.T).reshape(weight.shape)
        db = g2.sum(axis=1) if bias is not None else None
        dx = None
        if x.requires_grad:
            dxp = kernels.col2im(wm.T @ g2, n, ci, hp, wp, k)
            dx = dxp[:, :, top:top + h, top:top + w]
        return dx, dw, db

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, inputs, bw, "conv2d")


def maxpool2(x):
    _require_4d(x, "maxpool2")
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    out, idx = kernels.maxpool2_forward(x.data)

    def bw(g):
        return (kernels.maxpool2_backward(g, idx),)

    return _make(out, (x,), bw, "maxpool2")


def upsample2(x):
    _require_4d(x, "upsample2")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bw(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _make(out, (x,), bw, "upsample2")


def crop_center(x, target_h, target_w):
    """Centre crop; an odd margin leaves its extra row/column at the bottom/right."""
    _require_4d(x, "crop_center")
    h, w = x.shape[2:]
    if target_h > h or target_w > w or target_h < 1 or target_w < 1:
        raise ShapeError(f"cannot crop {h}x{w} to {target_h}x{target_w}")
    top = (h - target_h) // 2
    left = (w - target_w) // 2
    out = x.data[:, :, top:top + target_h, left:left + target_w].copy()

    def bw(g):
        dx = np.zeros(x.shape)
        dx[:, :, top:top + target_h, left:left + target_w] = g
        return (dx,)

    return _make(out, (x,), bw, "crop_center")


def concat_channels(a, b):
    _require_4d(a, "concat_channels")
    _require_4d(b, "concat_channels")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels shape mismatch: {a.shape} vs {b.shape}")
    ca = a.shape[1]

    def bw(g):
        return g[:, :ca], g[:, ca:]

    return _make(np.concatenate([a.data, b.data], axis=1), (a, b), bw, "concat")


def standardize(x, axes, eps=1e-5):
    """(x - mean) / sqrt(var + eps) with biased statistics over ``axes``.

    Returns the normalized tensor plus the (mean, var) arrays used.
    """
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        gm = g.mean(axis=axes, keepdims=True)
        gx = (g * xhat).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _make(xhat, (x,), bw, "standardize"), mu, var


# -- reverse pass ------------------------------------------------------------


def backward(loss):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape.

    Gradients add across fan-out and onto any existing leaf ``grad``.
    """
    if loss.shape != (1, 1, 1, 1):
        raise ContractError(f"backward needs a (1, 1, 1, 1) loss, got {loss.shape}")
    node = loss._node
    if node is None:
        raise ContractError("loss was not produced by a recorded op; tape is empty")
    tape = node.tape
    if tape.consumed:
        raise StateError("backward already ran on this tape; reset it or run a new forward pass")
    loss.grad = np.ones(loss.shape)
    for nd in reversed(tape.nodes):
        g = nd.output.grad
        if g is None:
            continue
        grads = nd.backward(g)
        for inp, gi in zip(nd.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            inp.grad = gi if inp.grad is None else inp.grad + gi
    # drop closures and tensor<->node cycles so activations free immediately
    for nd in tape.nodes:
        nd.backward = None
        nd.inputs = ()
        nd.output = None
    tape.nodes = []
    tape.consumed = True


def grad_check(f, x, step=1e-5):
    """Compare autodiff gradients with central differences.

    ``x`` is a tensor or a sequence of tensors; ``f(*x)`` must return a
    scalar tensor. The tensors are perturbed in place and restored. Returns
    the max over all elements of |a - n| / max(|a|, |n|, 1e-8).
    """
    if step <= 0:
        raise ContractError("grad_check step must be positive")
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    with Tape():
        y = f(*xs)
        if y.size != 1:
            raise ContractError(f"grad_check needs a scalar-valued f, got shape {y.shape}")
        if y.shape != (1, 1, 1, 1):
            y = reshape(y, (1, 1, 1, 1))
        backward(y)
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in xs]

    def value():
        with no_grad():
            out = f(*xs)
        return float(out.data.reshape(-1)[0])

    worst = 0.0
    for t, a in zip(xs, analytic):
        flat = t.data.reshape(-1)
        af = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = value()
            flat[i] = orig - step
            fm = value()
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            err = abs(af[i] - num) / max(abs(af[i]), abs(num), 1e-8)
            worst = max(worst, err)
    for t in xs:
        t.grad = None
    return worst
