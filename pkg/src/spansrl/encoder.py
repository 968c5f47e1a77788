"""Stacked LSTM encoder with alternating directions and ReLU projections.

Layer 1 recurs left to right, layer 2 right to left, and so on; every layer
gets fresh zero h/c state per sentence, so the interleaving lives purely in the
visiting order. After each LSTM layer, the next layer's input (and, after the
last layer, the encoder output itself) is a per-position ReLU projection of
[layer input ; layer hidden states] down to d_hidden. A stack of L layers
therefore owns L LSTM layers and L projections, and always outputs T x d_hidden.

Train-time dropout applies one fresh mask per layer per forward pass to the
layer's input, the first layer's word+mark concatenation included; both the
gates and the projection consume that same realized input.
"""

from __future__ import annotations

import numpy as np

from . import numcore as nc

_GATES = ("i", "f", "o", "g")


class LstmLayer:
    """One fixed-direction LSTM layer; standard cell, no peepholes."""

    def __init__(self, name: str, d_in: int, d_hidden: int, direction: str, rng) -> None:
        if direction not in ("forward", "backward"):
            raise ValueError(f"unknown direction {direction!r}")
        if d_in <= 0 or d_hidden <= 0:
            raise ValueError("layer dimensions must be positive")
        self.name = name
        self.d_in = d_in
        self.d_hidden = d_hidden
        self.direction = direction
        self.w = {g: nc.Parameter(f"{name}.w_{g}", nc.orthonormal_init(d_hidden, d_in, rng)) for g in _GATES}
        self.u = {g: nc.Parameter(f"{name}.u_{g}", nc.orthonormal_init(d_hidden, d_hidden, rng)) for g in _GATES}
        self.b = {g: nc.Parameter(f"{name}.b_{g}", np.zeros(d_hidden)) for g in _GATES}

    def parameters(self) -> list[nc.Parameter]:
        return [self.w[g] for g in _GATES] + [self.u[g] for g in _GATES] + [self.b[g] for g in _GATES]

    def fused_nodes(self, graph: nc.Graph):
        """Gate parameters stacked once per graph so each step is three matmuls."""
        wx = nc.concat([graph.param(self.w[g]) for g in _GATES], axis=0)
        uh = nc.concat([graph.param(self.u[g]) for g in _GATES], axis=0)
        b = nc.concat([graph.param(self.b[g]) for g in _GATES], axis=0)
        return wx, uh, b

    def step(self, graph: nc.Graph, x_t: nc.Node, h_prev: nc.Node, c_prev: nc.Node, fused=None):
        """One cell update: gates from [x_t, h_prev], new (h, c)."""
        if fused is None:
            fused = self.fused_nodes(graph)
        wx, uh, b = fused
        d = self.d_hidden
        z = nc.matmul(wx, x_t) + nc.matmul(uh, h_prev) + b
        gate_i = nc.sigmoid(nc.slice1d(z, 0, d))
        gate_f = nc.sigmoid(nc.slice1d(z, d, 2 * d))
        gate_o = nc.sigmoid(nc.slice1d(z, 2 * d, 3 * d))
        cand = nc.tanh(nc.slice1d(z, 3 * d, 4 * d))
        c = nc.multiply(gate_f, c_prev) + nc.multiply(gate_i, cand)
        h = nc.multiply(gate_o, nc.tanh(c))
        return h, c


class InterLayerProjection:
    """ReLU(W [x ; h]) applied per position; no bias term."""

    def __init__(self, name: str, d_in: int, d_hidden: int, rng) -> None:
        self.weight = nc.Parameter(f"{name}.w", nc.glorot_init(d_hidden, d_in + d_hidden, rng))


class EncoderStack:
    """L alternating-direction LSTM layers plus their L projections."""

    def __init__(self, layers: int, d_in: int, d_hidden: int, rng) -> None:
        if layers < 1:
            raise ValueError("encoder needs at least one layer")
        self.layers = layers
        self.d_in = d_in
        self.d_hidden = d_hidden
        self.lstms: list[LstmLayer] = []
        self.projections: list[InterLayerProjection] = []
        for n in range(1, layers + 1):
            direction = "forward" if n % 2 == 1 else "backward"
            layer_in = d_in if n == 1 else d_hidden
            self.lstms.append(LstmLayer(f"enc{n}", layer_in, d_hidden, direction, rng))
            self.projections.append(InterLayerProjection(f"proj{n}", layer_in, d_hidden, rng))

    def parameters(self) -> list[nc.Parameter]:
        out = []
        for lstm, proj in zip(self.lstms, self.projections):
            out.extend(lstm.parameters())
            out.append(proj.weight)
        return out

    def encode(
        self,
        graph: nc.Graph,
        inputs: nc.Node,
        train: bool = False,
        dropout_ratio: float = 0.1,
        rng=None,
    ) -> nc.Node:
        """Full stack over a T x d_in input node; returns the T x d_hidden output."""
        length = inputs.data.shape[0]
        if length < 1:
            raise ValueError("cannot encode an empty sentence")
        if inputs.data.shape[1] != self.d_in:
            raise ValueError(
                f"encoder expects input width {self.d_in}, got {inputs.data.shape[1]}"
            )
        x = inputs
        for lstm, proj in zip(self.lstms, self.projections):
            if train and dropout_ratio > 0.0:
                x = nc.dropout(x, dropout_ratio, rng)
            fused = lstm.fused_nodes(graph)
            zero = graph.constant(np.zeros(self.d_hidden))
            h, c = zero, zero
            hs: list[nc.Node | None] = [None] * length
            order = range(length) if lstm.direction == "forward" else range(length - 1, -1, -1)
            for t in order:
                h, c = lstm.step(graph, nc.row(x, t), h, c, fused)
                hs[t] = h
            stacked = nc.stack_rows(hs)
            x = nc.relu(nc.matmul(nc.concat([x, stacked], axis=1), nc.transpose(graph.param(proj.weight))))
        return x
