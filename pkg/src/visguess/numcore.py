"""Dense float64 numeric core: a small reverse-mode tape and RMSProp.

All values are numpy float64 arrays of rank <= 2. The tape records one
forward pass; ``Tape.backward`` returns a gradient per named parameter.
Forward-only helpers (``sigmoid_np`` etc.) are provided for hot paths that
never need gradients.
"""

from __future__ import annotations

import math

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A value violated a numeric contract (NaN/Inf, zero norm, ...)."""


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim > 2:
        raise ShapeError(f"rank {a.ndim} > 2 not supported")
    return a


def _check_finite(a: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {what}")
    return a


# ---------------------------------------------------------------------------
# forward-only helpers


def sigmoid_np(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_np(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - np.max(x))
    return e / e.sum()


def l2_normalize_np(x, name: str = "vector"):
    x = np.asarray(x, dtype=np.float64)
    n = np.linalg.norm(x)
    if n == 0.0:
        raise NumericError(f"cannot l2-normalize zero-norm {name}")
    return x / n


def cosine_np(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine similarity of zero-norm vector")
    return float(a @ b / (na * nb))


def glorot_uniform(shape, rng: np.random.Generator) -> np.ndarray:
    """Uniform in [-s, s], s = sqrt(6 / (fan_in + fan_out))."""
    if len(shape) == 2:
        fan_in, fan_out = shape[1], shape[0]
    else:
        fan_in, fan_out = shape[0], shape[0]
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


# ---------------------------------------------------------------------------
# parameters and RMSProp


class ParamSet:
    """Named float64 tensors plus per-tensor RMSProp accumulators."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.acc: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        a = _check_finite(_as_array(x=value), name)
        self.params[name] = a.copy()
        self.acc[name] = np.zeros_like(a)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __setitem__(self, name: str, value) -> None:
        self.params[name] = _as_array(value)

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def copy(self) -> "ParamSet":
        out = ParamSet()
        out.params = {k: v.copy() for k, v in self.params.items()}
        out.acc = {k: v.copy() for k, v in self.acc.items()}
        return out


def rmsprop_step(pset: ParamSet, grads: dict, lr: float,
                 decay: float = 0.9, epsilon: float = 1e-8) -> int:
    """In-place RMSProp update. Returns the number of tensors skipped
    because their gradient was non-finite."""
    skipped = 0
    for name, g in grads.items():
        p = pset.params[name]
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape "
                             f"{p.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            skipped += 1
            continue
        acc = pset.acc[name]
        acc *= decay
        acc += (1.0 - decay) * g * g
        p -= lr * g / (np.sqrt(acc) + epsilon)
    return skipped


# ---------------------------------------------------------------------------
# reverse-mode tape


class Node:
    __slots__ = ("value", "parents", "grad")

    def __init__(self, value: np.ndarray, parents=()):
        self.value = value
        self.parents = parents  # tuple of (Node, vjp)
        self.grad = None


class Tape:
    """Records one forward pass; nodes are appended in topological order."""

    def __init__(self, check_finite: bool = True):
        self.nodes: list[Node] = []
        self.param_nodes: dict[str, Node] = {}
        self._check = check_finite

    def _node(self, value, parents=(), what="op result") -> Node:
        v = _as_array(value)
        if self._check:
            _check_finite(v, what)
        n = Node(v, parents)
        self.nodes.append(n)
        return n

    def const(self, value) -> Node:
        return self._node(value, what="constant")

    def param(self, name: str, value) -> Node:
        if name in self.param_nodes:
            return self.param_nodes[name]
        n = self._node(value, what=f"parameter {name!r}")
        self.param_nodes[name] = n
        return n

    def params_from(self, pset: ParamSet, names=None) -> dict[str, Node]:
        return {n: self.param(n, pset.params[n])
                for n in (names if names is not None else pset.names())}

    # -- ops ---------------------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value
        if av.ndim == 2 and bv.ndim == 2:
            if av.shape[1] != bv.shape[0]:
                raise ShapeError(f"matmul {av.shape} @ {bv.shape}")
            vjps = ((a, lambda g: g @ bv.T), (b, lambda g: av.T @ g))
        elif av.ndim == 2 and bv.ndim == 1:
            if av.shape[1] != bv.shape[0]:
                raise ShapeError(f"matmul {av.shape} @ {bv.shape}")
            vjps = ((a, lambda g: np.outer(g, bv)), (b, lambda g: av.T @ g))
        elif av.ndim == 1 and bv.ndim == 2:
            if av.shape[0] != bv.shape[0]:
                raise ShapeError(f"matmul {av.shape} @ {bv.shape}")
            vjps = ((a, lambda g: bv @ g), (b, lambda g: np.outer(av, g)))
        else:
            raise ShapeError("matmul needs at least one rank-2 operand; "
                             "use dot for vector-vector")
        return self._node(av @ bv, vjps, "matmul")

    def add(self, a: Node, b: Node) -> Node:
        if a.value.shape != b.value.shape:
            raise ShapeError(f"add {a.value.shape} + {b.value.shape}")
        return self._node(a.value + b.value,
                          ((a, lambda g: g), (b, lambda g: g)), "add")

    def add_col(self, mat: Node, vec: Node) -> Node:
        """matrix (m,n) + column vector (m,) broadcast over columns."""
        mv, vv = mat.value, vec.value
        if mv.ndim != 2 or vv.ndim != 1 or mv.shape[0] != vv.shape[0]:
            raise ShapeError(f"add_col {mv.shape} + {vv.shape}")
        return self._node(mv + vv[:, None],
                          ((mat, lambda g: g),
                           (vec, lambda g: g.sum(axis=1))), "add_col")

    def scale(self, a: Node, c: float) -> Node:
        c = float(c)
        return self._node(a.value * c, ((a, lambda g: g * c),), "scale")

    def add_const(self, a: Node, c) -> Node:
        return self._node(a.value + c, ((a, lambda g: g),), "add_const")

    def add_scalar(self, a: Node, s: Node) -> Node:
        """a + s with a scalar node s broadcast over a."""
        if s.value.ndim != 0 and s.value.size != 1:
            raise ShapeError("add_scalar needs a scalar second operand")
        return self._node(a.value + s.value,
                          ((a, lambda g: g),
                           (s, lambda g: np.sum(g))), "add_scalar")

    def mul(self, a: Node, b: Node) -> Node:
        if a.value.shape != b.value.shape:
            raise ShapeError(f"mul {a.value.shape} * {b.value.shape}")
        av, bv = a.value, b.value
        return self._node(av * bv,
                          ((a, lambda g: g * bv), (b, lambda g: g * av)),
                          "mul")

    def concat(self, a: Node, b: Node) -> Node:
        if a.value.ndim != 1 or b.value.ndim != 1:
            raise ShapeError("concat expects two vectors")
        na = a.value.shape[0]
        return self._node(np.concatenate([a.value, b.value]),
                          ((a, lambda g: g[:na]), (b, lambda g: g[na:])),
                          "concat")

    def tanh(self, a: Node) -> Node:
        y = np.tanh(a.value)
        return self._node(y, ((a, lambda g: g * (1.0 - y * y)),), "tanh")

    def sigmoid(self, a: Node) -> Node:
        y = sigmoid_np(a.value)
        return self._node(y, ((a, lambda g: g * y * (1.0 - y)),), "sigmoid")

    def relu(self, a: Node) -> Node:
        y = np.maximum(a.value, 0.0)
        mask = (a.value > 0.0).astype(np.float64)
        return self._node(y, ((a, lambda g: g * mask),), "relu")

    def softmax(self, a: Node) -> Node:
        if a.value.ndim != 1:
            raise ShapeError("softmax expects a vector")
        y = softmax_np(a.value)
        return self._node(y, ((a, lambda g: y * (g - np.dot(g, y))),),
                          "softmax")

    def l2_normalize(self, a: Node, name: str = "vector") -> Node:
        v = a.value
        if v.ndim == 1:
            n = np.linalg.norm(v)
            if n == 0.0:
                raise NumericError(f"cannot l2-normalize zero-norm {name}")
            y = v / n

            def vjp(g, y=y, n=n):
                return (g - y * np.dot(y, g)) / n
            return self._node(y, ((a, vjp),), "l2_normalize")
        # column-wise for matrices
        n = np.linalg.norm(v, axis=0)
        if np.any(n == 0.0):
            raise NumericError(f"cannot l2-normalize zero-norm column "
                               f"in {name}")
        y = v / n

        def vjp(g, y=y, n=n):
            return (g - y * np.sum(y * g, axis=0)) / n
        return self._node(y, ((a, vjp),), "l2_normalize")

    def dot(self, a: Node, b: Node) -> Node:
        if a.value.ndim != 1 or b.value.ndim != 1:
            raise ShapeError("dot expects two vectors")
        if a.value.shape != b.value.shape:
            raise ShapeError(f"dot {a.value.shape} . {b.value.shape}")
        av, bv = a.value, b.value
        return self._node(np.dot(av, bv),
                          ((a, lambda g: g * bv), (b, lambda g: g * av)),
                          "dot")

    def cosine_similarity(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value
        if av.shape != bv.shape or av.ndim != 1:
            raise ShapeError("cosine_similarity expects two equal vectors")
        na, nb = np.linalg.norm(av), np.linalg.norm(bv)
        if na == 0.0 or nb == 0.0:
            raise NumericError("cosine similarity of zero-norm vector")
        c = float(av @ bv / (na * nb))

        def vjp_a(g):
            return g * (bv / (na * nb) - c * av / (na * na))

        def vjp_b(g):
            return g * (av / (na * nb) - c * bv / (nb * nb))
        return self._node(c, ((a, vjp_a), (b, vjp_b)), "cosine_similarity")

    def cosine_columns(self, v: Node, m: Node) -> Node:
        """Cosine of vector v against every column of matrix m."""
        vv, mv = v.value, m.value
        if vv.ndim != 1 or mv.ndim != 2 or mv.shape[0] != vv.shape[0]:
            raise ShapeError(f"cosine_columns {vv.shape} vs {mv.shape}")
        nv = np.linalg.norm(vv)
        ncols = np.linalg.norm(mv, axis=0)
        if nv == 0.0 or np.any(ncols == 0.0):
            raise NumericError("cosine similarity of zero-norm vector")
        c = (vv @ mv) / (nv * ncols)

        def vjp_v(g):
            return (mv / ncols) @ (g / nv) - (np.dot(g, c) / (nv * nv)) * vv

        def vjp_m(g):
            return (np.outer(vv / nv, g / ncols)
                    - mv * (g * c / (ncols * ncols)))
        return self._node(c, ((v, vjp_v), (m, vjp_m)), "cosine_columns")

    def sum_axis0(self, a: Node) -> Node:
        """Column sums of a matrix: (m, n) -> (n,)."""
        if a.value.ndim != 2:
            raise ShapeError("sum_axis0 expects a matrix")
        m = a.value.shape[0]
        return self._node(a.value.sum(axis=0),
                          ((a, lambda g: np.tile(g, (m, 1))),), "sum_axis0")

    def sum(self, a: Node) -> Node:
        shape = a.value.shape
        return self._node(np.sum(a.value),
                          ((a, lambda g: np.full(shape, float(g))),), "sum")

    def mean(self, a: Node) -> Node:
        shape = a.value.shape
        n = a.value.size
        return self._node(np.mean(a.value),
                          ((a, lambda g: np.full(shape, float(g) / n)),),
                          "mean")

    # -- backward ----------------------------------------------------------

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        if loss.value.ndim != 0 and loss.value.size != 1:
            raise ShapeError("backward requires a scalar loss node")
        for n in self.nodes:
            n.grad = None
        loss.grad = np.ones_like(loss.value)
        for n in reversed(self.nodes):
            if n.grad is None:
                continue
            for parent, vjp in n.parents:
                pg = vjp(n.grad)
                if parent.grad is None:
                    parent.grad = np.asarray(pg, dtype=np.float64)
                else:
                    parent.grad = parent.grad + pg
        return {name: (node.grad if node.grad is not None
                       else np.zeros_like(node.value))
                for name, node in self.param_nodes.items()}


# ---------------------------------------------------------------------------
# MLP helpers shared by the encoder and the two policies


def build_mlp(pset: ParamSet, prefix: str, sizes: list[int],
              rng: np.random.Generator) -> None:
    """Add weights for an MLP with tanh hidden layers and a linear output.

    ``sizes`` is [input, hidden..., output]; layer i maps sizes[i] ->
    sizes[i+1] via W{i} (out x in) and b{i}.
    """
    for i in range(len(sizes) - 1):
        pset.add(f"{prefix}.W{i}", glorot_uniform((sizes[i + 1], sizes[i]), rng))
        pset.add(f"{prefix}.b{i}", np.zeros(sizes[i + 1]))


def mlp_layer_count(pset: ParamSet, prefix: str) -> int:
    n = 0
    while f"{prefix}.W{n}" in pset:
        n += 1
    return n


def mlp_forward_np(pset: ParamSet, prefix: str, x: np.ndarray) -> np.ndarray:
    """Forward an MLP on a vector or on a matrix of column samples."""
    n = mlp_layer_count(pset, prefix)
    h = x
    for i in range(n):
        w, b = pset[f"{prefix}.W{i}"], pset[f"{prefix}.b{i}"]
        h = w @ h + (b[:, None] if h.ndim == 2 else b)
        if i < n - 1:
            h = np.tanh(h)
    return h


def mlp_forward_tape(tape: Tape, pset: ParamSet, prefix: str,
                     x: Node) -> Node:
    n = mlp_layer_count(pset, prefix)
    h = x
    for i in range(n):
        w = tape.param(f"{prefix}.W{i}", pset[f"{prefix}.W{i}"])
        b = tape.param(f"{prefix}.b{i}", pset[f"{prefix}.b{i}"])
        wh = tape.matmul(w, h)
        h = tape.add_col(wh, b) if wh.value.ndim == 2 else tape.add(wh, b)
        if i < n - 1:
            h = tape.tanh(h)
    return h
