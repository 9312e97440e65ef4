"""Dense tensors with tape-based reverse-mode differentiation.

Deliberately small: float32/float64 arrays, scalar broadcast only, and a
tape that is rebuilt for every training step because model surgery can
change weight shapes between steps. Every op output and every propagated
gradient is checked for NaN/Inf so that surgery bugs fail loudly.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import InvalidConfig, InvalidShape, InvalidState, NumericalError

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense array with an optional accumulated gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        if not np.isfinite(arr).all():
            raise NumericalError("tensor created with non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None

    @classmethod
    def _wrap(cls, data):
        # op outputs: finiteness already checked with the op id attached
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = False
        t.node = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name})"


class Node:
    __slots__ = ("op", "inputs", "output", "backward_fn", "idx", "tape")

    def __init__(self, op, inputs, output, backward_fn, idx, tape):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.idx = idx
        self.tape = tape


class Tape:
    """Recorder for one forward pass; nodes are replayed in reverse."""

    _stack: list["Tape"] = []

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        Tape._stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = Tape._stack.pop()
        assert popped is self
        return False

    @staticmethod
    def current():
        return Tape._stack[-1] if Tape._stack else None


def _op_id(op):
    tape = Tape.current()
    if tape is None:
        return op
    return f"{op}#{len(tape.nodes)}"


def _record(op, inputs, out_data, backward_fn):
    if not np.isfinite(out_data).all():
        raise NumericalError(f"non-finite output from op {_op_id(op)}")
    out = Tensor._wrap(out_data)
    tape = Tape.current()
    if tape is not None and any(
        t.requires_grad or t.node is not None for t in inputs
    ):
        node = Node(op, inputs, out, backward_fn, len(tape.nodes), tape)
        tape.nodes.append(node)
        out.node = node
    return out


def _accumulate(tensor, grad):
    if tensor.grad is None:
        tensor.grad = grad.copy()
    else:
        tensor.grad += grad


def backward(loss: Tensor):
    """Reverse-mode sweep from a scalar loss over its recording tape.

    Leaf gradients accumulate across calls until zeroed.
    """
    if loss.data.shape != ():
        raise InvalidShape(f"loss must be scalar, got shape {loss.data.shape}")
    _accumulate(loss, np.ones((), dtype=loss.data.dtype))
    if loss.node is None:
        if not loss.requires_grad:
            raise InvalidState("loss is not connected to a recorded graph")
        return
    tape = loss.node.tape
    for node in reversed(tape.nodes[: loss.node.idx + 1]):
        out_grad = node.output.grad
        if out_grad is None:
            continue
        grads = node.backward_fn(out_grad)
        for inp, g in zip(node.inputs, grads):
            if g is None:
                continue
            if inp.requires_grad or inp.node is not None:
                if not np.isfinite(g).all():
                    raise NumericalError(
                        f"non-finite gradient from op {node.op}#{node.idx}"
                    )
                _accumulate(inp, g)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# construction


def alloc(shape, init="zeros", *, requires_grad=False, dtype=np.float32):
    """Allocate a tensor; init is "zeros", ("constant", c),
    ("uniform", lo, hi, seed) or ("normal", mean, std, seed).

    seed may be an int or an existing numpy Generator.
    """
    dims = tuple(int(d) for d in shape)
    if any(d < 1 for d in dims):
        raise InvalidShape(f"dimensions must be >= 1, got {dims}")
    if init == "zeros":
        data = np.zeros(dims, dtype=dtype)
    elif isinstance(init, tuple) and init and init[0] == "constant":
        data = np.full(dims, init[1], dtype=dtype)
    elif isinstance(init, tuple) and init and init[0] in ("uniform", "normal"):
        kind = init[0]
        a, b, seed = init[1], init[2], init[3]
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        if kind == "uniform":
            data = rng.uniform(a, b, size=dims).astype(dtype)
        else:
            data = rng.normal(a, b, size=dims).astype(dtype)
    else:
        raise InvalidConfig(f"unknown init spec {init!r}")
    return Tensor(data, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise InvalidShape(f"matmul shapes {a.data.shape} x {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _record("matmul", (a, b), out, bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise InvalidShape("transpose expects a 2-d tensor")
    out = np.ascontiguousarray(a.data.T)

    def bwd(g):
        return (np.ascontiguousarray(g.T),)

    return _record("transpose", (a,), out, bwd)


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise InvalidShape(f"add shapes {a.data.shape} vs {b.data.shape}")
    return _record("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise InvalidShape(f"sub shapes {a.data.shape} vs {b.data.shape}")
    return _record("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise InvalidShape(f"mul shapes {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        return g * b.data, g * a.data

    return _record("mul", (a, b), a.data * b.data, bwd)


def scale(a: Tensor, c) -> Tensor:
    """Multiply by a python scalar or by a scalar (0-d) tensor."""
    if isinstance(c, Tensor):
        if c.data.shape != ():
            raise InvalidShape("scale factor tensor must be 0-d")

        def bwd(g):
            return g * c.data, np.sum(g * a.data, dtype=a.data.dtype)

        return _record("scale", (a, c), a.data * c.data, bwd)
    c = a.data.dtype.type(c)
    return _record("scale", (a,), a.data * c, lambda g: (g * c,))


def sum_all(a: Tensor) -> Tensor:
    out = a.data.sum()

    def bwd(g):
        return (np.full_like(a.data, g),)

    return _record("sum", (a,), out, bwd)


def mean_tensors(tensors) -> Tensor:
    """Mean of a list of same-shape tensors (left-fold of adds)."""
    acc = tensors[0]
    for t in tensors[1:]:
        acc = add(acc, t)
    return scale(acc, 1.0 / len(tensors))


# ---------------------------------------------------------------------------
# activations


def _sigmoid(x):
    # exp(-|x|) never overflows; pick the stable branch elementwise
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def swish(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = x.data * s

    def bwd(g):
        return (g * (s * (1.0 + x.data * (1.0 - s))),)

    return _record("swish", (x,), out, bwd)


def glu(x: Tensor, axis=-1) -> Tensor:
    ax = axis % x.data.ndim
    n = x.data.shape[ax]
    if n % 2 != 0:
        raise InvalidShape(f"glu needs an even size along axis {axis}, got {n}")
    half = n // 2
    lo = [slice(None)] * x.data.ndim
    hi = [slice(None)] * x.data.ndim
    lo[ax] = slice(0, half)
    hi[ax] = slice(half, n)
    a = x.data[tuple(lo)]
    b = x.data[tuple(hi)]
    sb = _sigmoid(b)
    out = a * sb

    def bwd(g):
        ga = g * sb
        gb = g * a * sb * (1.0 - sb)
        return (np.concatenate([ga, gb], axis=ax),)

    return _record("glu", (x,), out, bwd)


def softmax(x: Tensor, axis=-1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _record("softmax", (x,), out, bwd)


def log_softmax(x: Tensor, axis=-1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _record("log_softmax", (x,), out, bwd)


# ---------------------------------------------------------------------------
# normalization and convolution


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps=1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise InvalidConfig("layer_norm eps must be > 0")
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise InvalidShape(
            f"layer_norm affine shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match feature dim {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return _record("layer_norm", (x, gamma, beta), out, bwd)


def depthwise_conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel temporal convolution, zero padding keeps length.

    x: [T, ch], kernel: [k, ch] with odd k.
    """
    if x.data.ndim != 2 or kernel.data.ndim != 2:
        raise InvalidShape("depthwise_conv1d expects 2-d input and kernel")
    if kernel.data.shape[0] % 2 == 0:
        raise InvalidConfig(f"kernel length must be odd, got {kernel.data.shape[0]}")
    if kernel.data.shape[1] != x.data.shape[1]:
        raise InvalidShape(
            f"channel mismatch {x.data.shape[1]} vs {kernel.data.shape[1]}"
        )
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(kernel.data)
    out = kernels.depthwise_conv1d_forward(xd, wd)

    def bwd(g):
        gx, gw = kernels.depthwise_conv1d_backward(xd, wd, np.ascontiguousarray(g))
        return gx, gw

    return _record("depthwise_conv1d", (x, kernel), out, bwd)


# ---------------------------------------------------------------------------
# verification harness


def finite_diff_check(f, params, h=1e-5, tol=1e-4):
    """Compare autodiff gradients of scalar f() against central differences.

    f is re-evaluated around the current parameter values; params is the
    list of leaf tensors to probe (every element is perturbed). Relative
    error uses max(|ad|, |fd|, 1e-3) as denominator so near-zero gradients
    are judged absolutely. Returns a report dict; never raises on failure.
    """
    if h <= 0:
        raise InvalidConfig("finite_diff_check needs h > 0")
    zero_grads(params)
    with Tape():
        loss = f()
        backward(loss)
    ad = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        for p in params
    ]

    def eval_loss():
        with Tape():
            return float(f().data)

    max_err = 0.0
    worst = None
    per_param = []
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        fd = np.zeros(flat.shape[0], dtype=np.float64)
        for i in range(flat.shape[0]):
            keep = flat[i]
            flat[i] = keep + h
            up = eval_loss()
            flat[i] = keep - h
            down = eval_loss()
            flat[i] = keep
            fd[i] = (up - down) / (2.0 * h)
        adf = ad[pi].reshape(-1).astype(np.float64)
        denom = np.maximum(np.maximum(np.abs(adf), np.abs(fd)), 1e-3)
        err = np.abs(adf - fd) / denom
        eidx = int(np.argmax(err)) if err.size else 0
        emax = float(err[eidx]) if err.size else 0.0
        per_param.append(emax)
        if emax >= max_err:
            max_err = emax
            worst = (pi, eidx)
    return {
        "max_rel_err": max_err,
        "per_param": per_param,
        "worst": worst,
        "tol": tol,
        "passed": max_err < tol,
    }
