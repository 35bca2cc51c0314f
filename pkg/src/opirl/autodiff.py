"""Minimal reverse-mode autodiff over dense float64 matrices.

Everything is a 2-D numpy array: batches are rows, scalars are 1x1. The tape
is a DAG of Node objects; backward() topologically sorts it once and runs the
recorded vector-Jacobian closures. Gradients accumulate into .grad until
zeroed, so repeated backward calls after zero_grad are idempotent.

ReLU's subgradient at 0 is 0. |x|^p for p > 1 returns value 0 and gradient 0
at x = 0.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .errors import ContractError, DimensionError, ParseError

Array = np.ndarray


def _as_matrix(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise DimensionError(f"expected at most 2-D data, got shape {a.shape}")
    return a


def _unbroadcast(grad: Array, shape: tuple[int, int]) -> Array:
    # Sum gradient over axes that were broadcast in the forward op.
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and out.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    if out.shape != shape:
        raise DimensionError(f"cannot reduce gradient {grad.shape} to {shape}")
    return out


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "grad", "parents", "op", "_vjp", "needs_grad")

    def __init__(self, value, parents=(), op="leaf", vjp=None, needs_grad=False):
        self.value = _as_matrix(value)
        self.grad: Array | None = None
        self.parents = parents
        self.op = op
        self._vjp = vjp
        self.needs_grad = needs_grad or any(p.needs_grad for p in parents)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def _accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    # -- operator sugar -----------------------------------------------------

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"


class Parameter(Node):
    """A persistent, trainable leaf."""

    __slots__ = ()

    def __init__(self, value):
        super().__init__(value, op="param", needs_grad=True)


def constant(value) -> Node:
    return Node(value, op="const")


def _wrap(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


# -- primitives --------------------------------------------------------------


def add(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    out_val = a.value + b.value

    def vjp(g):
        if a.needs_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.needs_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Node(out_val, (a, b), "add", vjp)


def sub(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    out_val = a.value - b.value

    def vjp(g):
        if a.needs_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.needs_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return Node(out_val, (a, b), "sub", vjp)


def mul(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    out_val = a.value * b.value

    def vjp(g):
        if a.needs_grad:
            a._accumulate(_unbroadcast(g * b.value, a.shape))
        if b.needs_grad:
            b._accumulate(_unbroadcast(g * a.value, b.shape))

    return Node(out_val, (a, b), "mul", vjp)


def scale(a, s: float) -> Node:
    a = _wrap(a)
    s = float(s)

    def vjp(g):
        if a.needs_grad:
            a._accumulate(g * s)

    return Node(a.value * s, (a,), "scale", vjp)


def matmul(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} x {b.shape} do not agree")
    out_val = a.value @ b.value

    def vjp(g):
        if a.needs_grad:
            a._accumulate(g @ b.value.T)
        if b.needs_grad:
            b._accumulate(a.value.T @ g)

    return Node(out_val, (a, b), "matmul", vjp)


def transpose(a) -> Node:
    a = _wrap(a)

    def vjp(g):
        if a.needs_grad:
            a._accumulate(g.T)

    return Node(a.value.T, (a,), "transpose", vjp)


def relu(a) -> Node:
    a = _wrap(a)
    mask = a.value > 0.0

    def vjp(g):
        if a.needs_grad:
            a._accumulate(g * mask)

    return Node(np.where(mask, a.value, 0.0), (a,), "relu", vjp)


def tanh(a) -> Node:
    a = _wrap(a)
    t = np.tanh(a.value)

    def vjp(g):
        if a.needs_grad:
            a._accumulate(g * (1.0 - t * t))

    return Node(t, (a,), "tanh", vjp)


def exp(a) -> Node:
    a = _wrap(a)
    e = np.exp(a.value)

    def vjp(g):
        if a.needs_grad:
            a._accumulate(g * e)

    return Node(e, (a,), "exp", vjp)


def log(a) -> Node:
    a = _wrap(a)

    def vjp(g):
        if a.needs_grad:
            a._accumulate(g / a.value)

    return Node(np.log(a.value), (a,), "log", vjp)


def square(a) -> Node:
    a = _wrap(a)

    def vjp(g):
        if a.needs_grad:
            a._accumulate(g * (2.0 * a.value))

    return Node(a.value * a.value, (a,), "square", vjp)


def sqrt(a) -> Node:
    a = _wrap(a)
    r = np.sqrt(a.value)

    def vjp(g):
        if a.needs_grad:
            a._accumulate(g * (0.5 / r))

    return Node(r, (a,), "sqrt", vjp)


def abs_pow(a, p: float) -> Node:
    """|x|^p elementwise, p > 1; value and gradient are 0 at x = 0."""
    a = _wrap(a)
    p = float(p)
    if p <= 1.0:
        raise ContractError(f"abs_pow requires p > 1, got {p}")
    ax = np.abs(a.value)
    out_val = ax**p

    def vjp(g):
        if a.needs_grad:
            a._accumulate(g * (p * ax ** (p - 1.0) * np.sign(a.value)))

    return Node(out_val, (a,), "abs_pow", vjp)


def _softplus_val(x: Array) -> Array:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid_val(x: Array) -> Array:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(a) -> Node:
    a = _wrap(a)
    sig = _sigmoid_val(a.value)

    def vjp(g):
        if a.needs_grad:
            a._accumulate(g * sig)

    return Node(_softplus_val(a.value), (a,), "softplus", vjp)


def log_sigmoid(a) -> Node:
    """log(sigmoid(x)) = -softplus(-x); finite for |x| up to hundreds."""
    a = _wrap(a)
    sig_neg = _sigmoid_val(-a.value)

    def vjp(g):
        if a.needs_grad:
            a._accumulate(g * sig_neg)

    return Node(-_softplus_val(-a.value), (a,), "log_sigmoid", vjp)


def minimum(a, b) -> Node:
    """Elementwise min; gradient goes to the smaller side (ties to the first)."""
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise DimensionError(f"minimum shapes {a.shape} vs {b.shape}")
    take_a = a.value <= b.value

    def vjp(g):
        if a.needs_grad:
            a._accumulate(g * take_a)
        if b.needs_grad:
            b._accumulate(g * ~take_a)

    return Node(np.where(take_a, a.value, b.value), (a, b), "minimum", vjp)


def clip(a, lo: float, hi: float) -> Node:
    """Hard clip; gradient is 1 strictly inside (lo, hi), 0 outside."""
    a = _wrap(a)
    inside = (a.value > lo) & (a.value < hi)

    def vjp(g):
        if a.needs_grad:
            a._accumulate(g * inside)

    return Node(np.clip(a.value, lo, hi), (a,), "clip", vjp)


def col_slice(a, start: int, stop: int) -> Node:
    a = _wrap(a)

    def vjp(g):
        if a.needs_grad:
            full = np.zeros(a.shape)
            full[:, start:stop] = g
            a._accumulate(full)

    return Node(a.value[:, start:stop], (a,), "col_slice", vjp)


def hcat(*nodes) -> Node:
    parts = [_wrap(n) for n in nodes]
    widths = [p.shape[1] for p in parts]
    out_val = np.concatenate([p.value for p in parts], axis=1)

    def vjp(g):
        at = 0
        for p, w in zip(parts, widths):
            if p.needs_grad:
                p._accumulate(g[:, at : at + w])
            at += w

    return Node(out_val, tuple(parts), "hcat", vjp)


def total_sum(a) -> Node:
    a = _wrap(a)

    def vjp(g):
        if a.needs_grad:
            a._accumulate(np.full(a.shape, g[0, 0]))

    return Node(a.value.sum(), (a,), "sum", vjp)


def mean(a) -> Node:
    a = _wrap(a)
    n = a.value.size

    def vjp(g):
        if a.needs_grad:
            a._accumulate(np.full(a.shape, g[0, 0] / n))

    return Node(a.value.mean(), (a,), "mean", vjp)


def sum_cols(a) -> Node:
    """Row-wise sum: (n, m) -> (n, 1)."""
    a = _wrap(a)

    def vjp(g):
        if a.needs_grad:
            a._accumulate(np.broadcast_to(g, a.shape))

    return Node(a.value.sum(axis=1, keepdims=True), (a,), "sum_cols", vjp)


# -- backward ----------------------------------------------------------------


def backward(output: Node) -> None:
    """Backpropagate from a scalar output, accumulating into .grad."""
    if output.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 output, got {output.shape}")
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(output, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen or not node.needs_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    output._accumulate(np.ones((1, 1)))
    for node in reversed(order):
        if node._vjp is not None and node.grad is not None:
            node._vjp(node.grad)
            if node.parents:
                node.grad = None  # free interior grads; leaves keep theirs


def zero_grad(params) -> None:
    for p in _param_values(params):
        p.grad = None


def _param_values(params):
    if isinstance(params, dict):
        return params.values()
    return params


# -- multilayer perceptron ----------------------------------------------------

_ACT_FNS = {"relu": relu, "tanh": tanh, "identity": lambda n: n}


class Mlp:
    """Fully-connected net; ReLU hidden layers and identity output by default.

    Weights start uniform in +/- sqrt(6 / (fan_in + fan_out)), biases at zero.
    """

    def __init__(self, sizes, activations=None, rng=None):
        if len(sizes) < 2:
            raise ContractError("Mlp needs at least an input and an output size")
        if activations is None:
            activations = ["relu"] * (len(sizes) - 2) + ["identity"]
        if len(activations) != len(sizes) - 1:
            raise DimensionError(
                f"{len(sizes) - 1} layers but {len(activations)} activations"
            )
        for act in activations:
            if act not in _ACT_FNS:
                raise ContractError(f"unknown activation {act!r}")
        if rng is None:
            rng = np.random.default_rng()
        self.sizes = list(sizes)
        self.activations = list(activations)
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(Parameter(w))
            self.biases.append(Parameter(np.zeros((1, fan_out))))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def parameters(self) -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out

    def _check_input(self, cols: int) -> None:
        if cols != self.in_dim:
            raise DimensionError(
                f"input has {cols} columns but the first layer expects {self.in_dim}"
            )

    def forward(self, x, params_const: bool = False) -> Node:
        """Graph forward. With params_const the weights enter as constants,
        so backward reaches the input but not this net's parameters."""
        h = _wrap(x)
        self._check_input(h.shape[1])
        for w, b, act in zip(self.weights, self.biases, self.activations):
            if params_const:
                z = add(matmul(h, constant(w.value)), constant(b.value))
            else:
                z = add(matmul(h, w), b)
            h = _ACT_FNS[act](z)
        return h

    __call__ = forward

    def apply(self, x: Array) -> Array:
        """Fast graph-free forward for acting and evaluation."""
        h = np.asarray(x, dtype=np.float64)
        squeeze = h.ndim == 1
        if squeeze:
            h = h.reshape(1, -1)
        self._check_input(h.shape[1])
        for w, b, act in zip(self.weights, self.biases, self.activations):
            h = h @ w.value + b.value
            if act == "relu":
                np.maximum(h, 0.0, out=h)
            elif act == "tanh":
                np.tanh(h, out=h)
        return h[0] if squeeze else h

    def input_gradient(self, x, params_const: bool = False) -> Node:
        """Gradient of the scalar output w.r.t. each input row, as a graph
        node, so it can appear inside a differentiable penalty.

        ReLU masks are held constant (their a.e.-correct derivative); the
        tanh derivative stays on the tape.
        """
        if self.out_dim != 1:
            raise ContractError("input_gradient needs a scalar-output net")
        h = _wrap(x)
        self._check_input(h.shape[1])
        zs: list[Node] = []
        hs: list[Node] = []
        for w, b, act in zip(self.weights, self.biases, self.activations):
            if params_const:
                z = add(matmul(h, constant(w.value)), constant(b.value))
            else:
                z = add(matmul(h, w), b)
            zs.append(z)
            h = _ACT_FNS[act](z)
            hs.append(h)
        n = h.shape[0]
        g = constant(np.ones((n, 1)))
        for i in reversed(range(len(self.weights))):
            act = self.activations[i]
            if act == "relu":
                g = mul(g, constant((zs[i].value > 0.0).astype(np.float64)))
            elif act == "tanh":
                g = mul(g, sub(constant(np.ones_like(hs[i].value)), square(hs[i])))
            w = self.weights[i]
            g = matmul(g, constant(w.value.T) if params_const else transpose(w))
        return g


# -- Adam ---------------------------------------------------------------------


class AdamState:
    """Bias-corrected Adam accumulator for a named parameter set."""

    def __init__(self, params: dict[str, Parameter], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ContractError(f"learning rate must be positive, got {lr}")
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ContractError("betas must lie in (0, 1)")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}


def adam_step(params: dict[str, Parameter], grads: dict[str, Array], state: AdamState) -> None:
    """One in-place Adam update; step count goes up by exactly 1."""
    for key in params:
        if key not in grads:
            raise ContractError(f"missing gradient for parameter {key!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.value.shape:
            raise DimensionError(
                f"gradient for {key!r} has shape {g.shape}, parameter {p.value.shape}"
            )
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.value -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)


class Adam:
    """Convenience wrapper reading gradients straight off the parameters."""

    def __init__(self, params: dict[str, Parameter], lr: float, **kw):
        self.params = params
        self.state = AdamState(params, lr, **kw)

    def step(self, grads: dict[str, Array] | None = None) -> None:
        if grads is None:
            grads = {
                k: (p.grad if p.grad is not None else np.zeros_like(p.value))
                for k, p in self.params.items()
            }
        adam_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        zero_grad(self.params)


# -- gradient checking ---------------------------------------------------------


def finite_diff_check(net: Mlp, x: Array, h: float = 1e-4) -> float:
    """Max relative error of analytic parameter gradients of sum(net(x))
    against central finite differences."""
    if h <= 0:
        raise ContractError(f"step h must be positive, got {h}")
    x = _as_matrix(x)
    params = net.parameters()
    zero_grad(params)
    out = total_sum(net.forward(x))
    backward(out)
    analytic = {
        k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value))
        for k, p in params.items()
    }
    zero_grad(params)

    def loss() -> float:
        return float(net.apply(x).sum())

    worst = 0.0
    for k, p in params.items():
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss()
            flat[i] = keep - h
            down = loss()
            flat[i] = keep
            numeric = (up - down) / (2.0 * h)
            err = abs(analytic[k].reshape(-1)[i] - numeric) / (abs(numeric) + 1e-8)
            worst = max(worst, err)
    return worst


# -- parameter container --------------------------------------------------------

_FORMAT = "params-v1"


def save_params(path, arrays: dict[str, Array], meta: dict | None = None) -> None:
    """Text container: hex floats round-trip bit-exactly."""
    lines = [_FORMAT, json.dumps(meta or {}, sort_keys=True)]
    for name, arr in arrays.items():
        a = _as_matrix(arr)
        lines.append(f"{name} {a.shape[0]} {a.shape[1]}")
        lines.append(" ".join(v.hex() for v in a.reshape(-1)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path) -> tuple[dict[str, Array], dict]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _FORMAT:
        raise ParseError(f"line 1: bad format header, expected {_FORMAT!r}")
    try:
        meta = json.loads(lines[1])
    except (IndexError, json.JSONDecodeError) as exc:
        raise ParseError(f"line 2: bad metadata record: {exc}") from exc
    arrays: dict[str, Array] = {}
    i = 2
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        try:
            name, rows, cols = lines[i].split()
            rows, cols = int(rows), int(cols)
            data = np.array([float.fromhex(tok) for tok in lines[i + 1].split()])
        except (ValueError, IndexError) as exc:
            raise ParseError(f"line {i + 1}: bad parameter record: {exc}") from exc
        if data.size != rows * cols:
            raise ParseError(
                f"line {i + 2}: {name!r} declares {rows}x{cols} but has {data.size} values"
            )
        arrays[name] = data.reshape(rows, cols)
        i += 2
    return arrays, meta
