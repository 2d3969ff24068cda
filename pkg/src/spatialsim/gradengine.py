"""Minimal reverse-mode differentiation over dense float64 arrays.

Every primitive returns a :class:`Tensor` that remembers its parents and a
closure propagating the output adjoint back to them. :func:`backward` walks the
tape in reverse topological order. Only the handful of operations the graph
models need are provided.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple["Tensor", ...] = (),
                 backward_fn: Callable[[np.ndarray], None] | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        # Interior nodes get their buffer at the start of each reverse sweep.
        self.grad = (np.zeros_like(self.data)
                     if requires_grad and backward_fn is None else None)
        self._parents = parents
        self._backward = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Evaluate without recording a tape."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    # Nodes that cannot reach a parameter are left off the tape.
    live = tuple(p for p in parents if p.requires_grad) if _GRAD_ENABLED else ()
    if not live:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=live, backward_fn=backward_fn)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad += g


def _shape_error(op: str, a: tuple, b: tuple) -> ValueError:
    return ValueError(f"{op}: incompatible shapes {a} and {b}")


# -- primitives ---------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def backward_fn(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _result(out, (a, b), backward_fn)


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may be a row vector broadcast over the rows of ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        row_broadcast = False
    elif a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        row_broadcast = True
    else:
        raise _shape_error("add", a.shape, b.shape)
    out = a.data + b.data

    def backward_fn(g):
        _accumulate(a, g)
        _accumulate(b, g.sum(axis=0) if row_broadcast else g)

    return _result(out, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("mul", a.shape, b.shape)
    out = a.data * b.data

    def backward_fn(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _result(out, (a, b), backward_fn)


def concat(tensors: Sequence) -> Tensor:
    """Concatenate along the last axis."""
    ts = [as_tensor(t) for t in tensors]
    lead = ts[0].shape[:-1]
    for t in ts[1:]:
        if t.shape[:-1] != lead:
            raise _shape_error("concat", ts[0].shape, t.shape)
    out = np.concatenate([t.data for t in ts], axis=-1)
    bounds = np.cumsum([0] + [t.shape[-1] for t in ts])

    def backward_fn(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            _accumulate(t, g[..., lo:hi])

    return _result(out, ts, backward_fn)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def backward_fn(g):
        _accumulate(x, g * mask)

    return _result(out, (x,), backward_fn)


def _check_index(index: np.ndarray, n: int, what: str) -> np.ndarray:
    index = np.asarray(index)
    if index.ndim != 1 or not np.issubdtype(index.dtype, np.integer):
        raise ValueError(f"{what}: index must be a 1-D integer array")
    if index.size and (index.min() < 0 or index.max() >= n):
        raise ValueError(f"{what}: index out of range [0, {n})")
    return index


def segment_matrix(segment_index: np.ndarray, n_segments: int) -> sp.csr_matrix:
    """Sparse incidence matrix S with S[k, i] = 1 iff row i belongs to segment k.

    Row sums over a CSR matrix run left to right over the stored column order,
    so reductions are reproducible bit for bit.
    """
    m = len(segment_index)
    return sp.csr_matrix((np.ones(m), (segment_index, np.arange(m))),
                         shape=(n_segments, m))


def segment_sum(values, segment_index, n_segments: int) -> Tensor:
    values = as_tensor(values)
    if values.data.ndim != 2:
        raise ValueError(f"segment_sum: values must be 2-D, got shape {values.shape}")
    segment_index = _check_index(segment_index, n_segments, "segment_sum")
    if len(segment_index) != values.shape[0]:
        raise _shape_error("segment_sum", values.shape, segment_index.shape)
    out = np.asarray(segment_matrix(segment_index, n_segments) @ values.data)

    def backward_fn(g):
        _accumulate(values, g[segment_index])

    return _result(out, (values,), backward_fn)


def gather_rows(x, index) -> Tensor:
    """Row lookup ``x[index]``; the adjoint scatters back with a segment sum."""
    x = as_tensor(x)
    index = _check_index(index, x.shape[0], "gather_rows")
    out = x.data[index]

    def backward_fn(g):
        _accumulate(x, np.asarray(segment_matrix(index, x.shape[0]) @ g))

    return _result(out, (x,), backward_fn)


def mean_rows(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"mean_rows: need a non-empty 2-D input, got shape {x.shape}")
    n = x.shape[0]
    out = x.data.sum(axis=0) / n

    def backward_fn(g):
        _accumulate(x, np.broadcast_to(g / n, x.shape))

    return _result(out, (x,), backward_fn)


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.sum())

    def backward_fn(g):
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _result(out, (x,), backward_fn)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of row-wise softmax against integer class labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise _shape_error("softmax_cross_entropy", logits.shape, labels.shape)
    k = logits.shape[1]
    labels = _check_index(labels, k, "softmax_cross_entropy")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(labels))
    out = np.asarray(np.mean(log_norm - z[rows, labels]))

    def backward_fn(g):
        probs = np.exp(z - log_norm[:, None])
        probs[rows, labels] -= 1.0
        _accumulate(logits, g * probs / len(labels))

    return _result(out, (logits,), backward_fn)


# -- reverse sweep ------------------------------------------------------------

def _topological_order(root: Tensor) -> list[Tensor]:
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


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every leaf reachable from ``loss``."""
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    for node in order:
        if node._backward is not None:
            node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# -- parameters and optimizer -------------------------------------------------

class ParamStore:
    """Ordered name -> parameter map plus Adam moment buffers."""

    def __init__(self):
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def num_scalars(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != t.shape:
                raise ValueError(f"{name}: expected shape {t.shape}, got {value.shape}")
            t.data = value.copy()
            t.zero_grad()


def init_linear(store: ParamStore, name: str, fan_in: int, fan_out: int,
                rng: np.random.Generator) -> None:
    bound = 1.0 / np.sqrt(fan_in)
    store.add(f"{name}.W", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    store.add(f"{name}.b", np.zeros(fan_out))


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in store.items():
        g = p.grad
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    store.zero_grad()



# -- checkpoint container -----------------------------------------------------
#
# JSON object: {"format": CHECKPOINT_FORMAT, "seed": int, "hyperparameters": {...},
#  "extra": {...}, "params": [{"name": str, "shape": [...], "values": [floats]}, ...]}
# Values are row-major and written with 17 significant digits (exact round trip).

CHECKPOINT_FORMAT = "spatialsim-checkpoint/1"


def encode_checkpoint(params: dict[str, np.ndarray], hyperparameters: dict, seed: int,
                      extra: dict | None = None) -> str:
    entries = []
    for name, value in params.items():
        value = np.asarray(value, dtype=np.float64)
        vals = ",".join(format(v, ".17g") for v in value.ravel().tolist())
        entries.append(f'{{"name":{json.dumps(name)},"shape":{json.dumps(list(value.shape))},'
                       f'"values":[{vals}]}}')
    head = json.dumps({"format": CHECKPOINT_FORMAT, "seed": int(seed),
                       "hyperparameters": hyperparameters, "extra": extra or {}},
                      sort_keys=True)
    return head[:-1] + ',"params":[' + ",".join(entries) + "]}\n"


def decode_checkpoint(text: str) -> dict:
    obj = json.loads(text)
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a checkpoint (format {obj.get('format')!r})")
    params = OrderedDict()
    for entry in obj["params"]:
        shape = tuple(entry["shape"])
        values = np.array(entry["values"], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise ValueError(f"{entry['name']}: {values.size} values for shape {shape}")
        params[entry["name"]] = values.reshape(shape)
    obj["params"] = params
    return obj


def write_checkpoint(path, params, hyperparameters: dict, seed: int,
                     extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(encode_checkpoint(params, hyperparameters, seed, extra))


def read_checkpoint(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return decode_checkpoint(fh.read())
