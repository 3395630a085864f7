"""Graph convolution layers, residual blocks and the encoder/decoder stack.

A GC-layer maps ``h`` (K x F_in) to ``act(A @ h @ W)`` with a learnable,
unconstrained K x K adjacency ``A`` and an F_in x F_out weight ``W``.  A codec
is one input layer, four residual blocks of two layers each, and one output
layer.  Parameters live in a :class:`~privmotion.tensor.ParamStore` under
dotted names such as ``itp.obs.block2.layer1.W``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import tensor as tc
from .errors import DimensionError

ACTIVATIONS = ("tanh", "none")
NUM_BLOCKS = 4


@dataclass(frozen=True)
class Mode:
    training: bool = False
    dropout: float = 0.0
    rng: np.random.Generator | None = None


EVAL = Mode()


@dataclass(frozen=True)
class LayerSpec:
    name: str
    k: int
    fan_in: int
    fan_out: int
    activation: str = "tanh"
    droppable: bool = True


def gc_layer(h: tc.Node, A: tc.Node, W: tc.Node, activation: str = "tanh", mode: Mode = EVAL,
             droppable: bool = True) -> tc.Node:
    if A.shape[0] != A.shape[1] or h.shape[-2] != A.shape[0]:
        raise DimensionError(f"gc_layer: adjacency {A.shape} does not fit input {h.shape}")
    if h.shape[-1] != W.shape[0]:
        raise DimensionError(f"gc_layer: weight {W.shape} does not fit input {h.shape}")
    out = tc.matmul(tc.matmul(A, h), W)
    if activation == "tanh":
        out = tc.tanh_act(out)
    elif activation != "none":
        raise ValueError(f"unknown activation {activation!r}")
    if droppable and mode.training:
        out = tc.dropout_apply(out, mode.dropout, True, mode.rng)
    return out


@dataclass(frozen=True)
class CodecSpec:
    """Shape of one encoder or decoder: width_in -> hidden x 4 blocks -> width_out."""

    prefix: str
    k: int
    width_in: int
    hidden: int
    width_out: int
    output_activation: str = "tanh"

    def layers(self) -> list[LayerSpec]:
        out = [LayerSpec(f"{self.prefix}.layer_in", self.k, self.width_in, self.hidden)]
        for b in range(NUM_BLOCKS):
            for i in range(2):
                out.append(LayerSpec(f"{self.prefix}.block{b}.layer{i}", self.k, self.hidden, self.hidden))
        # output layer is never dropped: its output is a representation or the coefficients
        out.append(LayerSpec(f"{self.prefix}.layer_out", self.k, self.hidden, self.width_out,
                             self.output_activation, droppable=False))
        return out

    def param_shapes(self) -> dict[str, tuple[int, int]]:
        shapes = {}
        for layer in self.layers():
            shapes[layer.name + ".A"] = (layer.k, layer.k)
            shapes[layer.name + ".W"] = (layer.fan_in, layer.fan_out)
        return shapes

    def param_count(self) -> int:
        return sum(r * c for r, c in self.param_shapes().values())


def init_codec(spec: CodecSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """A ~ U(+-1/sqrt(K)), W ~ U(+-1/sqrt(F_in)), drawn layer by layer."""
    params = {}
    for layer in spec.layers():
        a_bound = 1.0 / np.sqrt(layer.k)
        w_bound = 1.0 / np.sqrt(layer.fan_in)
        params[layer.name + ".A"] = rng.uniform(-a_bound, a_bound, (layer.k, layer.k))
        params[layer.name + ".W"] = rng.uniform(-w_bound, w_bound, (layer.fan_in, layer.fan_out))
    return params


def residual_block(h: tc.Node, spec: CodecSpec, block: int, nodes: Mapping[str, tc.Node],
                   mode: Mode = EVAL) -> tc.Node:
    if h.shape[-1] != spec.hidden:
        raise DimensionError(f"residual block expects width {spec.hidden}, got {h.shape}")
    y = h
    for i in range(2):
        name = f"{spec.prefix}.block{block}.layer{i}"
        y = gc_layer(y, nodes[name + ".A"], nodes[name + ".W"], "tanh", mode)
    return tc.add(h, y)


def codec_forward(h: tc.Node, spec: CodecSpec, nodes: Mapping[str, tc.Node], mode: Mode = EVAL) -> tc.Node:
    if h.shape[-2:] != (spec.k, spec.width_in):
        raise DimensionError(f"{spec.prefix}: expected input (..., {spec.k}, {spec.width_in}), got {h.shape}")
    first = f"{spec.prefix}.layer_in"
    y = gc_layer(h, nodes[first + ".A"], nodes[first + ".W"], "tanh", mode)
    for b in range(NUM_BLOCKS):
        y = residual_block(y, spec, b, nodes, mode)
    last = f"{spec.prefix}.layer_out"
    return gc_layer(y, nodes[last + ".A"], nodes[last + ".W"], spec.output_activation, mode, droppable=False)
