"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Every operation records its inputs and a backward closure on the output
tensor; :func:`backward` replays the tape in reverse topological order.
64-bit floats are used throughout so analytic gradients can be validated
against central finite differences at tight tolerances.

A graph instance is single-threaded during forward/backward; independent
graphs may live on separate threads, and parameters can be handed between
threads in the gaps between optimizer steps.

Deliberately out of scope: GPU execution, general broadcasting (only the
1-D bias case is supported), convolutions, and graph rewriting.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "mvtsgan-params"
CHECKPOINT_VERSION = 1

BCE_EPS = 1e-7


class ShapeError(Exception):
    """Operand shapes are inconsistent with the operation."""


class GraphStateError(Exception):
    """The tape was used in an invalid order (e.g. backward called twice)."""


class CheckpointError(Exception):
    """A parameter file is missing, unreadable, or structurally wrong."""


_grad_enabled = [True]


class no_grad:
    """Context manager that disables tape recording (forward-only passes)."""

    def __enter__(self):
        self._prev = _grad_enabled[0]
        _grad_enabled[0] = False
        return self

    def __exit__(self, *exc):
        _grad_enabled[0] = self._prev
        return False


class Tensor:
    """A value plus (optionally) a gradient buffer and tape linkage."""

    __slots__ = ("values", "grad", "requires_grad", "name", "_parents", "_backward_fn", "_used")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.values) if requires_grad else None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._used = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def detach(self) -> "Tensor":
        """A tape-free view of the same values."""
        return Tensor(self.values)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def item(self) -> float:
        return float(self.values)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.values.shape}{tag}, requires_grad={self.requires_grad})"

    # Convenience operator sugar; scalars are treated as constants.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _ensure_grad(t: Tensor) -> np.ndarray | None:
    if not t.requires_grad:
        return None
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    return t.grad


def _node(values: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    if not _grad_enabled[0] or not any(p.requires_grad for p in parents):
        return Tensor(values)
    out = Tensor(values)
    out.requires_grad = True
    out._parents = parents
    out._backward_fn = backward_fn
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# Primitive operations
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.shape == b.values.shape:
        pass
    elif b.values.ndim == 1 and a.values.shape[-1:] == b.values.shape:
        pass  # bias broadcast over leading axes
    elif a.values.ndim == 1 and b.values.shape[-1:] == a.values.shape:
        a, b = b, a
    else:
        raise ShapeError(f"add: cannot combine shapes {a.values.shape} and {b.values.shape}")
    out_values = a.values + b.values

    def backward_fn(g):
        ga = _ensure_grad(a)
        if ga is not None:
            ga += g
        gb = _ensure_grad(b)
        if gb is not None:
            if b.values.shape == g.shape:
                gb += g
            else:
                gb += g.reshape(-1, g.shape[-1]).sum(axis=0)

    return _node(out_values, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.shape != b.values.shape and a.values.ndim > 0 and b.values.ndim > 0:
        raise ShapeError(f"sub: cannot combine shapes {a.values.shape} and {b.values.shape}")
    out_values = a.values - b.values

    def backward_fn(g):
        ga = _ensure_grad(a)
        if ga is not None:
            ga += g
        gb = _ensure_grad(b)
        if gb is not None:
            gb -= g

    return _node(out_values, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        scale = float(b)

        def backward_scalar(g):
            ga = _ensure_grad(a)
            if ga is not None:
                ga += g * scale

        return _node(a.values * scale, (a,), backward_scalar)

    b = _as_tensor(b)
    if a.values.shape != b.values.shape:
        raise ShapeError(f"mul: cannot combine shapes {a.values.shape} and {b.values.shape}")

    def backward_fn(g):
        ga = _ensure_grad(a)
        if ga is not None:
            ga += g * b.values
        gb = _ensure_grad(b)
        if gb is not None:
            gb += g * a.values

    return _node(a.values * b.values, (a, b), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.values.shape[1] != b.values.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.values.shape} and {b.values.shape}")

    def backward_fn(g):
        ga = _ensure_grad(a)
        if ga is not None:
            ga += g @ b.values.T
        gb = _ensure_grad(b)
        if gb is not None:
            gb += a.values.T @ g

    return _node(a.values @ b.values, (a, b), backward_fn)


def tanh(x: Tensor) -> Tensor:
    out_values = np.tanh(x.values)

    def backward_fn(g):
        gx = _ensure_grad(x)
        if gx is not None:
            gx += g * (1.0 - out_values * out_values)

    return _node(out_values, (x,), backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    out_values = 0.5 * (np.tanh(0.5 * x.values) + 1.0)  # overflow-free logistic

    def backward_fn(g):
        gx = _ensure_grad(x)
        if gx is not None:
            gx += g * out_values * (1.0 - out_values)

    return _node(out_values, (x,), backward_fn)


def log(x: Tensor) -> Tensor:
    def backward_fn(g):
        gx = _ensure_grad(x)
        if gx is not None:
            gx += g / x.values

    return _node(np.log(x.values), (x,), backward_fn)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.values > lo) & (x.values < hi)

    def backward_fn(g):
        gx = _ensure_grad(x)
        if gx is not None:
            gx += g * inside

    return _node(np.clip(x.values, lo, hi), (x,), backward_fn)


def concat(parts: list[Tensor], axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    axis = axis % parts[0].values.ndim
    sizes = [p.values.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            gp = _ensure_grad(part)
            if gp is not None:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                gp += g[tuple(index)]

    return _node(np.concatenate([p.values for p in parts], axis=axis), tuple(parts), backward_fn)


def time_slice(x: Tensor, t: int) -> Tensor:
    """Select timestep ``t`` from a [B x T x F] tensor, yielding [B x F]."""
    if x.values.ndim != 3:
        raise ShapeError(f"time_slice expects a 3-D tensor, got shape {x.values.shape}")

    def backward_fn(g):
        gx = _ensure_grad(x)
        if gx is not None:
            gx[:, t, :] += g

    return _node(x.values[:, t, :], (x,), backward_fn)


def stack_time(steps: list[Tensor]) -> Tensor:
    """Stack T tensors of shape [B x F] into [B x T x F]."""

    def backward_fn(g):
        for t, step in enumerate(steps):
            gs = _ensure_grad(step)
            if gs is not None:
                gs += g[:, t, :]

    return _node(np.stack([s.values for s in steps], axis=1), tuple(steps), backward_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old_shape = x.values.shape

    def backward_fn(g):
        gx = _ensure_grad(x)
        if gx is not None:
            gx += g.reshape(old_shape)

    return _node(x.values.reshape(shape), (x,), backward_fn)


def tsum(x: Tensor) -> Tensor:
    def backward_fn(g):
        gx = _ensure_grad(x)
        if gx is not None:
            gx += g

    return _node(np.sum(x.values), (x,), backward_fn)


def tmean(x: Tensor) -> Tensor:
    size = x.values.size

    def backward_fn(g):
        gx = _ensure_grad(x)
        if gx is not None:
            gx += g / size

    return _node(np.mean(x.values), (x,), backward_fn)


def bce_loss(p: Tensor, y: Tensor) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1-eps]."""
    p, y = _as_tensor(p), _as_tensor(y)
    if p.values.shape != y.values.shape:
        raise ShapeError(f"bce_loss: shapes {p.values.shape} and {y.values.shape} differ")
    pc = clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return tmean(-(mul(y, log(pc)) + mul(sub(1.0, y), log(sub(1.0, pc)))))


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable requires_grad tensor.

    The tape of a given loss can be replayed once; a second call without a
    fresh forward pass raises :class:`GraphStateError`.
    """
    if loss.values.ndim != 0:
        raise ShapeError("backward expects a scalar loss")
    if loss._used:
        raise GraphStateError("backward already called on this graph; rerun the forward pass")
    if not loss.requires_grad:
        loss._used = True
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))

    loss.grad = np.array(1.0)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)
    loss._used = True


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def _uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class DenseLayer:
    """Affine map y = xW + b with uniform(-1/sqrt(in), 1/sqrt(in)) weights."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, name: str = "dense"):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Tensor(_uniform_init(rng, in_dim, (in_dim, out_dim)), requires_grad=True,
                             name=f"{name}.weight")
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        if x.values.ndim != 2 or x.values.shape[1] != self.in_dim:
            raise ShapeError(
                f"dense expects [B x {self.in_dim}], got {x.values.shape}"
            )
        return matmul(x, self.weight) + self.bias

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class LstmLayer:
    """Single-layer LSTM run stepwise from zero initial hidden and cell state.

    Each gate owns one [(in+H) x H] matrix applied to the concatenated
    [x_t, h_{t-1}] plus a bias.  The forget-gate bias starts at +1 so early
    training does not immediately flush the cell state.
    """

    GATE_NAMES = ("input", "forget", "output", "candidate")

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator, name: str = "lstm"):
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        fan_in = in_dim + hidden_dim
        self.weights: dict[str, Tensor] = {}
        self.biases: dict[str, Tensor] = {}
        for gate in self.GATE_NAMES:
            self.weights[gate] = Tensor(
                _uniform_init(rng, fan_in, (fan_in, hidden_dim)),
                requires_grad=True, name=f"{name}.{gate}.weight",
            )
            bias = np.zeros(hidden_dim)
            if gate == "forget":
                bias += 1.0
            self.biases[gate] = Tensor(bias, requires_grad=True, name=f"{name}.{gate}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        """Map [B x T x in] to the full hidden sequence [B x T x H]."""
        if x.values.ndim != 3 or x.values.shape[2] != self.in_dim:
            raise ShapeError(
                f"lstm expects [B x T x {self.in_dim}], got {x.values.shape}"
            )
        batch, n_steps, _ = x.values.shape
        h = Tensor(np.zeros((batch, self.hidden_dim)))
        c = Tensor(np.zeros((batch, self.hidden_dim)))
        hidden_steps: list[Tensor] = []
        for t in range(n_steps):
            xh = concat([time_slice(x, t), h], axis=1)
            gate_i = sigmoid(matmul(xh, self.weights["input"]) + self.biases["input"])
            gate_f = sigmoid(matmul(xh, self.weights["forget"]) + self.biases["forget"])
            gate_o = sigmoid(matmul(xh, self.weights["output"]) + self.biases["output"])
            cand = tanh(matmul(xh, self.weights["candidate"]) + self.biases["candidate"])
            c = mul(gate_f, c) + mul(gate_i, cand)
            h = mul(gate_o, tanh(c))
            hidden_steps.append(h)
        return stack_time(hidden_steps)

    def parameters(self) -> list[Tensor]:
        params = []
        for gate in self.GATE_NAMES:
            params.append(self.weights[gate])
            params.append(self.biases[gate])
        return params


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class Sgd:
    """Plain gradient descent: theta <- theta - lr * grad."""

    def __init__(self, params: list[Tensor], lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            p.values -= self.lr * p.grad

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


class Adam:
    """Bias-corrected adaptive-moment update (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(
        self,
        params: list[Tensor],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / correction1
            v_hat = self.v[i] / correction2
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# Parameter checkpoints
# ---------------------------------------------------------------------------

def save_params(path: str | Path, params: list[Tensor], extra: dict | None = None) -> None:
    """Write named parameters as JSON; float64 repr round-trips bit-exactly."""
    names = [p.name for p in params]
    if None in names:
        raise CheckpointError("every checkpointed parameter needs a name")
    if len(set(names)) != len(names):
        raise CheckpointError(f"duplicate parameter names in checkpoint: {names}")
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "extra": extra or {},
        "params": [
            {"name": p.name, "shape": list(p.values.shape), "values": p.values.ravel().tolist()}
            for p in params
        ],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_params(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back as {name: array} plus its extra block."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, "
            f"got {doc.get('format')!r} v{doc.get('version')!r}"
        )
    arrays: dict[str, np.ndarray] = {}
    for entry in doc["params"]:
        try:
            arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        except (KeyError, ValueError, TypeError) as exc:
            raise CheckpointError(f"{path}: malformed parameter entry ({exc})") from exc
        arrays[entry["name"]] = arr
    return arrays, doc.get("extra", {})


def assign_params(params: list[Tensor], arrays: dict[str, np.ndarray]) -> None:
    """Load checkpoint arrays into live parameters, matching by name."""
    for p in params:
        if p.name not in arrays:
            raise CheckpointError(f"checkpoint is missing parameter {p.name!r}")
        arr = arrays[p.name]
        if arr.shape != p.values.shape:
            raise CheckpointError(
                f"parameter {p.name!r}: checkpoint shape {arr.shape}, model shape {p.values.shape}"
            )
        p.values = arr.copy()
