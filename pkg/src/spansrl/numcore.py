"""Dense float64 tensors and a tape-based reverse-mode differentiation engine.

Everything downstream (encoder, span scorer, ensemble) builds its forward pass as
a define-by-run graph of `Node` objects recorded on a `Graph`. Calling
`Graph.backward` on a scalar loss walks the tape once in reverse and returns a
gradient map for every registered `Parameter`. Ops exist only as the functions in
this module, so a graph cannot contain an operation without a backward rule.

Numerics are float64 throughout. Node values are treated as immutable once
produced; the single sanctioned mutation is `adam_step` updating `Parameter.data`
between graphs. Randomness (init, dropout masks) always comes from a caller-owned
generator, see `make_rng`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; one seed, one stream, owned by the caller."""
    return np.random.Generator(np.random.Philox(seed))


def as_f64(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    return a


class Parameter:
    """Trainable tensor whose storage persists across graphs."""

    __slots__ = ("name", "data")

    def __init__(self, name: str, data) -> None:
        self.name = name
        self.data = as_f64(data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class Node:
    """One value in a graph. Ops produce new nodes; data is never rewritten."""

    __slots__ = ("data", "grad", "graph", "_backward")

    def __init__(self, data: Array, graph: "Graph", backward=None) -> None:
        self.data = data
        self.grad: Array | None = None
        self.graph = graph
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Node(shape={self.data.shape})"

    def __add__(self, other: "Node") -> "Node":
        return add(self, other)

    def __sub__(self, other: "Node") -> "Node":
        return subtract(self, other)

    def __mul__(self, other: "Node") -> "Node":
        return multiply(self, other)

    def __matmul__(self, other: "Node") -> "Node":
        return matmul(self, other)


class Graph:
    """Tape of nodes in construction order; reverse order is valid for backprop."""

    def __init__(self) -> None:
        self._tape: list[Node] = []
        self._param_leaves: dict[Parameter, Node] = {}
        self._done = False

    def _new(self, data: Array, backward=None) -> Node:
        node = Node(data, self, backward)
        self._tape.append(node)
        return node

    def constant(self, value) -> Node:
        """Leaf carrying a fixed value; receives no gradient of its own."""
        return self._new(as_f64(value))

    def param(self, p: Parameter) -> Node:
        """Leaf viewing `p.data`. Memoized, so reuses within one graph share grads."""
        leaf = self._param_leaves.get(p)
        if leaf is None:
            leaf = self._new(p.data)
            self._param_leaves[p] = leaf
        return leaf

    def backward(self, loss: Node) -> dict[Parameter, Array]:
        """Seed d(loss)/d(loss)=1, sweep the tape once, return per-parameter grads.

        Parameters registered on this graph but unreachable from `loss` map to
        zero gradients. A graph can only be differentiated once.
        """
        if loss.graph is not self:
            raise ValueError("loss node belongs to a different graph")
        if loss.data.shape != ():
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        if self._done:
            raise ValueError("graph was already differentiated")
        self._done = True
        loss.grad = np.ones(())
        for node in reversed(self._tape):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
        return {
            p: (leaf.grad if leaf.grad is not None else np.zeros_like(p.data))
            for p, leaf in self._param_leaves.items()
        }


def _accum(node: Node, g: Array) -> None:
    if node.grad is None:
        node.grad = np.zeros_like(node.data)
    node.grad += g


def _same_graph(*nodes: Node) -> Graph:
    g = nodes[0].graph
    for n in nodes[1:]:
        if n.graph is not g:
            raise ValueError("operands live on different graphs")
    return g


def add(a: Node, b: Node) -> Node:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
    g = _same_graph(a, b)

    def backward(grad):
        _accum(a, grad)
        _accum(b, grad)

    return g._new(a.data + b.data, backward)


def subtract(a: Node, b: Node) -> Node:
    if a.data.shape != b.data.shape:
        raise ValueError(f"subtract: shape mismatch {a.data.shape} vs {b.data.shape}")
    g = _same_graph(a, b)

    def backward(grad):
        _accum(a, grad)
        _accum(b, -grad)

    return g._new(a.data - b.data, backward)


def multiply(a: Node, b: Node) -> Node:
    """Elementwise product of same-shape nodes."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"multiply: shape mismatch {a.data.shape} vs {b.data.shape}")
    g = _same_graph(a, b)

    def backward(grad):
        _accum(a, grad * b.data)
        _accum(b, grad * a.data)

    return g._new(a.data * b.data, backward)


def matmul(a: Node, b: Node) -> Node:
    """(m,k) @ (k,n) -> (m,n), or (m,k) @ (k,) -> (m,)."""
    if a.data.ndim != 2:
        raise ValueError("matmul: left operand must be 2-D")
    if b.data.ndim == 2:
        if a.data.shape[1] != b.data.shape[0]:
            raise ValueError(f"matmul: inner dims {a.data.shape} @ {b.data.shape}")
        g = _same_graph(a, b)

        def backward(grad):
            _accum(a, grad @ b.data.T)
            _accum(b, a.data.T @ grad)

        return g._new(a.data @ b.data, backward)
    if b.data.ndim == 1:
        if a.data.shape[1] != b.data.shape[0]:
            raise ValueError(f"matmul: inner dims {a.data.shape} @ {b.data.shape}")
        g = _same_graph(a, b)

        def backward(grad):
            _accum(a, np.outer(grad, b.data))
            _accum(b, a.data.T @ grad)

        return g._new(a.data @ b.data, backward)
    raise ValueError("matmul: right operand must be 1-D or 2-D")


def transpose(a: Node) -> Node:
    if a.data.ndim != 2:
        raise ValueError("transpose: 2-D only")

    def backward(grad):
        _accum(a, grad.T)

    return a.graph._new(a.data.T.copy(), backward)


def concat(parts: list[Node], axis: int = 0) -> Node:
    """Concatenate along `axis` (vectors along 0, matrices along 0 or 1)."""
    if not parts:
        raise ValueError("concat: empty input")
    g = _same_graph(*parts)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def backward(grad):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if axis == 0:
                _accum(p, grad[lo:hi])
            else:
                _accum(p, grad[:, lo:hi])

    return g._new(np.concatenate([p.data for p in parts], axis=axis), backward)


def stack_rows(rows_: list[Node]) -> Node:
    """Stack T equal-length vectors into a (T, d) matrix."""
    if not rows_:
        raise ValueError("stack_rows: empty input")
    g = _same_graph(*rows_)

    def backward(grad):
        for t, r in enumerate(rows_):
            _accum(r, grad[t])

    return g._new(np.stack([r.data for r in rows_]), backward)


def row(a: Node, i: int) -> Node:
    """Select row i of a matrix as a vector."""
    if a.data.ndim != 2:
        raise ValueError("row: 2-D only")

    def backward(grad):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[i] += grad

    return a.graph._new(a.data[i], backward)


def rows(a: Node, index: Array) -> Node:
    """Gather rows (repetition allowed): the embedding/span row-select op."""
    if a.data.ndim != 2:
        raise ValueError("rows: 2-D only")
    idx = np.asarray(index, dtype=np.intp)

    def backward(grad):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, grad)

    return a.graph._new(a.data[idx], backward)


def slice1d(a: Node, lo: int, hi: int) -> Node:
    if a.data.ndim != 1:
        raise ValueError("slice1d: 1-D only")

    def backward(grad):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[lo:hi] += grad

    return a.graph._new(a.data[lo:hi], backward)


def element(a: Node, i: int) -> Node:
    """Pick one entry of a vector as a scalar node."""
    if a.data.ndim != 1:
        raise ValueError("element: 1-D only")

    def backward(grad):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[i] += grad

    return a.graph._new(a.data[i], backward)


def sigmoid(a: Node) -> Node:
    # tanh form stays finite for any float64 input
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

    def backward(grad):
        _accum(a, grad * out * (1.0 - out))

    return a.graph._new(out, backward)


def tanh(a: Node) -> Node:
    out = np.tanh(a.data)

    def backward(grad):
        _accum(a, grad * (1.0 - out * out))

    return a.graph._new(out, backward)


def relu(a: Node) -> Node:
    # subgradient 0 at the kink
    def backward(grad):
        _accum(a, grad * (a.data > 0.0))

    return a.graph._new(np.maximum(a.data, 0.0), backward)


def logsumexp(a: Node) -> Node:
    """log sum exp over a whole vector; max-shifted, grad is the softmax."""
    if a.data.ndim != 1 or a.data.size == 0:
        raise ValueError("logsumexp: nonempty 1-D only")
    m = np.max(a.data)
    out = m + np.log(np.sum(np.exp(a.data - m)))

    def backward(grad):
        _accum(a, grad * np.exp(a.data - out))

    return a.graph._new(np.asarray(out), backward)


def logsumexp_rows(a: Node) -> Node:
    """Per-row log sum exp of a matrix, (n, m) -> (n,)."""
    if a.data.ndim != 2 or a.data.shape[1] == 0:
        raise ValueError("logsumexp_rows: 2-D with nonempty rows only")
    m = np.max(a.data, axis=1, keepdims=True)
    out = (m + np.log(np.sum(np.exp(a.data - m), axis=1, keepdims=True)))[:, 0]

    def backward(grad):
        _accum(a, np.exp(a.data - out[:, None]) * grad[:, None])

    return a.graph._new(out, backward)


def softmax1d(a: Node) -> Node:
    if a.data.ndim != 1 or a.data.size == 0:
        raise ValueError("softmax1d: nonempty 1-D only")
    z = np.exp(a.data - np.max(a.data))
    s = z / np.sum(z)

    def backward(grad):
        _accum(a, s * (grad - np.dot(s, grad)))

    return a.graph._new(s, backward)


def sum_all(a: Node) -> Node:
    def backward(grad):
        _accum(a, np.broadcast_to(grad, a.data.shape))

    return a.graph._new(np.asarray(np.sum(a.data)), backward)


def sumsq(a: Node) -> Node:
    def backward(grad):
        _accum(a, 2.0 * grad * a.data)

    return a.graph._new(np.asarray(np.sum(a.data * a.data)), backward)


def scale(a: Node, c: float) -> Node:
    c = float(c)

    def backward(grad):
        _accum(a, grad * c)

    return a.graph._new(a.data * c, backward)


def smul(s: Node, b: Node) -> Node:
    """Scalar node times tensor node."""
    if s.data.shape != ():
        raise ValueError("smul: first operand must be scalar")
    g = _same_graph(s, b)

    def backward(grad):
        _accum(s, np.asarray(np.sum(grad * b.data)))
        _accum(b, grad * s.data)

    return g._new(s.data * b.data, backward)


def dot_const(a: Node, w) -> Node:
    """Inner product with a fixed weight vector."""
    w = as_f64(w)
    if a.data.shape != w.shape or a.data.ndim != 1:
        raise ValueError("dot_const: 1-D nodes matching the weight vector only")

    def backward(grad):
        _accum(a, grad * w)

    return a.graph._new(np.asarray(np.dot(a.data, w)), backward)


def gather(a: Node, rr, cc) -> Node:
    """Pick entries (rr[k], cc[k]) of a matrix into a vector."""
    if a.data.ndim != 2:
        raise ValueError("gather: 2-D only")
    rr = np.asarray(rr, dtype=np.intp)
    cc = np.asarray(cc, dtype=np.intp)

    def backward(grad):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, (rr, cc), grad)

    return a.graph._new(a.data[rr, cc], backward)


def apply_mask(a: Node, mask: Array, factor: float) -> Node:
    """Multiply by a fixed 0/1 mask and a constant factor; dropout's core."""
    scaled = as_f64(mask) * float(factor)
    if scaled.shape != a.data.shape:
        raise ValueError("apply_mask: mask shape mismatch")

    def backward(grad):
        _accum(a, grad * scaled)

    return a.graph._new(a.data * scaled, backward)


def dropout(a: Node, ratio: float, rng: np.random.Generator) -> Node:
    """Inverted dropout. One mask per call; ratio 0.0 is the identity map."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"dropout ratio must be in [0, 1), got {ratio}")
    if ratio == 0.0:
        return a
    keep = 1.0 - ratio
    mask = (rng.random(a.data.shape) >= ratio).astype(np.float64)
    return apply_mask(a, mask, 1.0 / keep)


def orthonormal_init(rows_: int, cols: int, rng: np.random.Generator) -> Array:
    """Random matrix whose smaller side is orthonormal (QR of a Gaussian draw)."""
    if rows_ <= 0 or cols <= 0:
        raise ValueError("orthonormal_init: dimensions must be positive")
    n, k = max(rows_, cols), min(rows_, cols)
    q, r = np.linalg.qr(rng.standard_normal((n, k)))
    sign = np.sign(np.diag(r))
    sign[sign == 0.0] = 1.0
    q = q * sign
    return q if q.shape == (rows_, cols) else q.T.copy()


def glorot_init(rows_: int, cols: int, rng: np.random.Generator) -> Array:
    """Fan-balanced uniform init for projection-style matrices."""
    if rows_ <= 0 or cols <= 0:
        raise ValueError("glorot_init: dimensions must be positive")
    limit = np.sqrt(6.0 / (rows_ + cols))
    return rng.uniform(-limit, limit, size=(rows_, cols))


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter for one parameter."""

    m: Array
    v: Array
    t: int = 0

    @classmethod
    def fresh(cls, shape) -> "AdamState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), t=0)


def adam_step(
    param: Parameter,
    grad: Array,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, applied to `param.data` in place."""
    if grad.shape != param.data.shape:
        raise ValueError(f"adam_step: grad shape {grad.shape} vs {param.data.shape}")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mhat = state.m / (1.0 - beta1**state.t)
    vhat = state.v / (1.0 - beta2**state.t)
    param.data -= lr * mhat / (np.sqrt(vhat) + eps)


class Adam:
    """Adam over a fixed parameter collection; the caller supplies lr per step."""

    def __init__(self, params: list[Parameter], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.states = {p: AdamState.fresh(p.data.shape) for p in self.params}

    def step(self, grads: dict[Parameter, Array], lr: float) -> None:
        for p in self.params:
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.data)
            adam_step(p, g, self.states[p], lr, self.beta1, self.beta2, self.eps)


def l2_penalty(graph: Graph, params: list[Parameter], lam: float) -> Node:
    """(lam/2) * sum of squared parameter entries, as a differentiable node."""
    if lam < 0.0:
        raise ValueError("l2_penalty: negative coefficient")
    if lam == 0.0 or not params:
        return graph.constant(0.0)
    total: Node | None = None
    for p in params:
        s = sumsq(graph.param(p))
        total = s if total is None else total + s
    return scale(total, 0.5 * lam)
