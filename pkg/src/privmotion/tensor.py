"""Dense float64 matrices with tape-based reverse-mode differentiation.

Every value is a numpy array of shape ``(rows, cols)``, optionally with one
leading batch axis ``(B, rows, cols)`` so that a minibatch runs through the
graph in one pass.  Parameters are always unbatched; their gradients are
summed over the batch.

Ops record themselves on the :class:`Graph` owning their inputs, so the node
list is in topological order by construction.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ContractError, ConfigError, DimensionError, FormatError

DTYPE = np.float64

Vjp = Callable[[np.ndarray], tuple]


class Node:
    __slots__ = ("graph", "index", "value", "parents", "vjp", "name")

    def __init__(self, graph: "Graph", value: np.ndarray, parents: tuple = (), vjp: Vjp | None = None,
                 name: str | None = None):
        self.graph = graph
        self.index = len(graph.nodes)
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node #{self.index}{label} shape={self.shape}>"


class Graph:
    """A recorded forward computation.

    ``nodes`` holds every recorded op in creation order; ``grads`` is filled
    by :func:`backward` (node index -> gradient) and replaced on each call.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.grads: dict[int, np.ndarray] = {}
        self._params: dict[str, Node] = {}

    def _add(self, value, parents=(), vjp=None, name=None) -> Node:
        node = Node(self, value, parents, vjp, name)
        self.nodes.append(node)
        return node

    def param(self, name: str, value: np.ndarray) -> Node:
        """Leaf whose gradient is reported by :func:`backward`. Cached by name."""
        node = self._params.get(name)
        if node is None:
            node = self._add(_as_matrix(value, name).copy(), name=name)
            self._params[name] = node
        return node

    def const(self, value) -> Node:
        return self._add(_as_matrix(value, "constant"))

    @property
    def params(self) -> dict[str, Node]:
        return dict(self._params)


def _as_matrix(value, what: str) -> np.ndarray:
    arr = np.asarray(value, dtype=DTYPE)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim not in (2, 3):
        raise DimensionError(f"{what}: expected a matrix or a batch of matrices, got shape {arr.shape}")
    return arr


def _graph_of(*nodes: Node) -> Graph:
    g = nodes[0].graph
    for n in nodes[1:]:
        if n.graph is not g:
            raise ContractError("operands belong to different graphs")
    return g


def _unbatch(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a batched gradient back down to an unbatched operand's shape."""
    if grad.shape == shape:
        return grad
    return grad.sum(axis=0)


# ---------------------------------------------------------------- primitives

def matmul(a: Node, b: Node) -> Node:
    g = _graph_of(a, b)
    av, bv = a.value, b.value
    if av.shape[-1] != bv.shape[-2] or (av.ndim == bv.ndim == 3 and av.shape[0] != bv.shape[0]):
        raise DimensionError(f"matmul: cannot multiply {av.shape} by {bv.shape}")
    out = av @ bv

    def vjp(grad):
        ga = grad @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ grad
        return _unbatch(ga, av.shape), _unbatch(gb, bv.shape)

    return g._add(out, (a, b), vjp)


def affine_combine(alpha: float, x: Node, beta: float, y: Node) -> Node:
    """alpha*x + beta*y, elementwise. Shapes must match exactly."""
    g = _graph_of(x, y)
    if x.shape != y.shape:
        raise DimensionError(f"affine_combine: shape {x.shape} does not match {y.shape}")
    alpha, beta = float(alpha), float(beta)
    out = alpha * x.value + beta * y.value
    return g._add(out, (x, y), lambda grad: (alpha * grad, beta * grad))


def add(x: Node, y: Node) -> Node:
    return affine_combine(1.0, x, 1.0, y)


def sub(x: Node, y: Node) -> Node:
    return affine_combine(1.0, x, -1.0, y)


def scale(x: Node, factor: float) -> Node:
    factor = float(factor)
    return x.graph._add(factor * x.value, (x,), lambda grad: (factor * grad,))


def mul(x: Node, y: Node) -> Node:
    g = _graph_of(x, y)
    if x.shape != y.shape:
        raise DimensionError(f"mul: shape {x.shape} does not match {y.shape}")
    xv, yv = x.value, y.value
    return g._add(xv * yv, (x, y), lambda grad: (grad * yv, grad * xv))


def tanh_act(x: Node) -> Node:
    out = np.tanh(x.value)
    return x.graph._add(out, (x,), lambda grad: (grad * (1.0 - out * out),))


def dropout_apply(x: Node, rate: float, training: bool, rng: np.random.Generator | None) -> Node:
    """Inverted dropout; the identity in eval mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= rate) * (1.0 / (1.0 - rate))
    return x.graph._add(x.value * mask, (x,), lambda grad: (grad * mask,))


def reshape(x: Node, shape: tuple[int, ...]) -> Node:
    old = x.shape
    out = x.value.reshape(shape)
    return x.graph._add(out, (x,), lambda grad: (grad.reshape(old),))


def transpose(x: Node) -> Node:
    """Swap the two trailing axes."""
    return x.graph._add(np.swapaxes(x.value, -1, -2), (x,), lambda grad: (np.swapaxes(grad, -1, -2),))


def take_cols(x: Node, start: int, stop: int) -> Node:
    cols = x.shape[-1]
    if not 0 <= start <= stop <= cols:
        raise DimensionError(f"take_cols: [{start}, {stop}) out of range for {cols} columns")
    out = x.value[..., start:stop]

    def vjp(grad):
        full = np.zeros(x.shape, dtype=DTYPE)
        full[..., start:stop] = grad
        return (full,)

    return x.graph._add(out, (x,), vjp)


def sum_all(x: Node) -> Node:
    shape = x.shape
    out = np.array(x.value.sum(), dtype=DTYPE)
    return x.graph._add(out, (x,), lambda grad: (np.full(shape, float(grad), dtype=DTYPE),))


def detach(x: Node) -> Node:
    return x.graph.const(x.value.copy())


LOSS_KINDS = ("l2_rows", "l1_sum", "frobenius")


def loss_reduce(kind: str, x: Node) -> Node:
    """Reduce a matrix to a scalar loss node.

    ``l2_rows`` sums the Euclidean norms of the rows (each a 3-vector),
    ``l1_sum`` sums absolute values, ``frobenius`` is the Frobenius norm.
    A batched input is reduced item by item and the results are summed.
    """
    v = x.value
    if kind == "l2_rows":
        if v.shape[-1] != 3:
            raise DimensionError(f"l2_rows needs 3 columns, got shape {v.shape}")
        norms = np.sqrt((v * v).sum(axis=-1))
        out = np.array(norms.sum(), dtype=DTYPE)
        safe = np.where(norms > 0.0, norms, 1.0)

        def vjp(grad):
            unit = np.where((norms > 0.0)[..., None], v / safe[..., None], 0.0)
            return (float(grad) * unit,)

    elif kind == "l1_sum":
        out = np.array(np.abs(v).sum(), dtype=DTYPE)
        vjp = lambda grad: (float(grad) * np.sign(v),)  # noqa: E731  sign(0) == 0
    elif kind == "frobenius":
        items = v if v.ndim == 3 else v[None]
        norms = np.sqrt((items * items).sum(axis=(-2, -1)))
        out = np.array(norms.sum(), dtype=DTYPE)
        safe = np.where(norms > 0.0, norms, 1.0)

        def vjp(grad):
            unit = np.where((norms > 0.0)[:, None, None], items / safe[:, None, None], 0.0)
            return (float(grad) * unit.reshape(v.shape),)

    else:
        raise ContractError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
    return x.graph._add(out, (x,), vjp)


def backward(graph: Graph, loss: Node) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to every parameter leaf.

    Parameters the loss does not depend on get an all-zero gradient.  The
    per-node gradients are left in ``graph.grads``.
    """
    if loss.graph is not graph:
        raise ContractError("loss node does not belong to this graph")
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.index: np.ones(loss.shape, dtype=DTYPE)}
    for node in reversed(graph.nodes[: loss.index + 1]):
        grad = grads.get(node.index)
        if grad is None or node.vjp is None:
            continue
        for parent, pgrad in zip(node.parents, node.vjp(grad)):
            if pgrad is None:
                continue
            prev = grads.get(parent.index)
            grads[parent.index] = pgrad if prev is None else prev + pgrad
    graph.grads = grads
    return {
        name: grads.get(node.index, np.zeros(node.shape, dtype=DTYPE)).copy()
        for name, node in graph._params.items()
    }


# ------------------------------------------------------------ parameter store

class ParamStore:
    """Named learnable matrices plus Adam moments and step counter."""

    def __init__(self, values: Mapping[str, np.ndarray] | None = None):
        self.values: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        for name, value in (values or {}).items():
            self[name] = value

    def __setitem__(self, name: str, value) -> None:
        arr = np.array(value, dtype=DTYPE)
        if arr.ndim != 2:
            raise DimensionError(f"parameter {name!r} must be 2-D, got shape {arr.shape}")
        self.values[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def names(self) -> list[str]:
        return list(self.values)

    def size(self) -> int:
        return sum(v.size for v in self.values.values())

    def copy(self) -> "ParamStore":
        out = ParamStore()
        out.values = {k: v.copy() for k, v in self.values.items()}
        out.m = {k: v.copy() for k, v in self.m.items()}
        out.v = {k: v.copy() for k, v in self.v.items()}
        out.step = self.step
        return out

    def subset(self, prefix: str) -> "ParamStore":
        out = ParamStore()
        for name in self.values:
            if name.startswith(prefix):
                out.values[name] = self.values[name].copy()
                out.m[name] = self.m[name].copy()
                out.v[name] = self.v[name].copy()
        out.step = self.step
        return out

    def bind(self, graph: Graph) -> dict[str, Node]:
        return {name: graph.param(name, value) for name, value in self.values.items()}

    def equals(self, other: "ParamStore") -> bool:
        """Bit-exact equality of the parameter values."""
        if self.names() != other.names():
            return False
        return all(np.array_equal(self.values[k], other.values[k]) for k in self.values)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads.values()))


def adam_step(params: ParamStore, grads: Mapping[str, np.ndarray], lr: float,
              clip_norm: float | None = 1.0) -> ParamStore:
    """One bias-corrected Adam update, in place, after global-norm clipping."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    for name in params.values:
        if name not in grads:
            raise ContractError(f"no gradient supplied for parameter {name!r}")
    factor = 1.0
    if clip_norm is not None and clip_norm > 0:
        norm = global_norm({k: grads[k] for k in params.values})
        if norm > clip_norm:
            factor = clip_norm / norm
    params.step += 1
    t = params.step
    corr1 = 1.0 - ADAM_BETA1 ** t
    corr2 = 1.0 - ADAM_BETA2 ** t
    for name, value in params.values.items():
        g = grads[name]
        if g.shape != value.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter has {value.shape}")
        if factor != 1.0:
            g = g * factor
        m = params.m[name] = ADAM_BETA1 * params.m[name] + (1.0 - ADAM_BETA1) * g
        v = params.v[name] = ADAM_BETA2 * params.v[name] + (1.0 - ADAM_BETA2) * (g * g)
        value -= lr * (m / corr1) / (np.sqrt(v / corr2) + ADAM_EPS)
    return params


# ------------------------------------------------------------- serialization

MAGIC = b"PKG1"
CHECKPOINT_SUFFIX = ".pkck"
_U32 = struct.Struct("<I")
_OPT_M = "opt.m."
_OPT_V = "opt.v."


def _encode_meta(meta: Mapping[str, object]) -> bytes:
    lines = []
    for key in sorted(meta):
        text = str(meta[key])
        if "\n" in text or "=" in key:
            raise ContractError(f"metadata entry {key!r} cannot be stored as a key=value line")
        lines.append(f"{key}={text}\n")
    return "".join(lines).encode("utf-8")


def _entries(store: ParamStore, with_optimizer: bool) -> Iterable[tuple[str, np.ndarray]]:
    yield from store.values.items()
    if with_optimizer:
        for name in store.values:
            yield _OPT_M + name, store.m[name]
        for name in store.values:
            yield _OPT_V + name, store.v[name]


def dump_params(store: ParamStore, meta: Mapping[str, object] | None = None,
                with_optimizer: bool = True) -> bytes:
    """Serialize to the ``PKG1`` container.

    Layout (little endian): magic, u32 entry count, then per entry u32 name
    length, UTF-8 name, u32 rows, u32 cols, rows*cols float64; finally u32
    trailer length and a UTF-8 ``key=value`` metadata block.
    """
    meta = dict(meta or {})
    meta["opt_step"] = store.step if with_optimizer else 0
    entries = list(_entries(store, with_optimizer))
    parts = [MAGIC, _U32.pack(len(entries))]
    for name, value in entries:
        raw = name.encode("utf-8")
        rows, cols = value.shape
        parts += [_U32.pack(len(raw)), raw, _U32.pack(rows), _U32.pack(cols),
                  np.ascontiguousarray(value, dtype="<f8").tobytes()]
    trailer = _encode_meta(meta)
    parts += [_U32.pack(len(trailer)), trailer]
    return b"".join(parts)


def parse_params(blob: bytes) -> tuple[ParamStore, dict[str, str]]:
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", 0)
    pos = 4

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"truncated while reading {what}", pos)
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    count = _U32.unpack(take(4, "entry count"))[0]
    raw_entries = {}
    for _ in range(count):
        start = pos
        name_len = _U32.unpack(take(4, "name length"))[0]
        try:
            name = take(name_len, "parameter name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("parameter name is not UTF-8", start + 4) from None
        rows = _U32.unpack(take(4, f"rows of {name!r}"))[0]
        cols = _U32.unpack(take(4, f"cols of {name!r}"))[0]
        data = np.frombuffer(take(8 * rows * cols, f"values of {name!r}"), dtype="<f8")
        if name in raw_entries:
            raise FormatError(f"duplicate entry {name!r}", start)
        raw_entries[name] = data.reshape(rows, cols).astype(DTYPE)
    meta_len = _U32.unpack(take(4, "metadata length"))[0]
    meta_start = pos
    try:
        text = take(meta_len, "metadata").decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("metadata is not UTF-8", meta_start) from None
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} unexpected trailing bytes", pos)
    meta = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"metadata line without '=': {line!r}", meta_start)
        meta[key] = value

    store = ParamStore()
    for name, value in raw_entries.items():
        if not name.startswith((_OPT_M, _OPT_V)):
            store[name] = value
    for name, value in raw_entries.items():
        for prefix, slot in ((_OPT_M, store.m), (_OPT_V, store.v)):
            if name.startswith(prefix):
                base = name[len(prefix):]
                if base not in store.values or store.values[base].shape != value.shape:
                    raise FormatError(f"optimizer entry {name!r} has no matching parameter")
                slot[base] = value
    store.step = int(meta.pop("opt_step", "0"))
    return store, meta


def save_params(path, store: ParamStore, meta: Mapping[str, object] | None = None) -> Path:
    path = Path(path)
    path.write_bytes(dump_params(store, meta))
    return path


def load_params(path) -> tuple[ParamStore, dict[str, str]]:
    return parse_params(Path(path).read_bytes())
