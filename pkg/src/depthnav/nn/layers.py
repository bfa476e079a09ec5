"""Layer specs and the small sequential network used for encoders and decoders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor
from .init import init_delta_orthogonal, init_orthogonal

LEAKY_SLOPE = 0.01
CONV_CHANNELS = 32
CONV_KERNEL = 3
CONV_PADDING = 1

_ACTIVATIONS = ("leaky-relu", "tanh", "none")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "dense" | "conv" | "deconv"
    in_size: int  # features for dense, channels for conv/deconv
    out_size: int
    activation: str = "none"
    kernel: int = CONV_KERNEL
    stride: int = 1
    output_padding: int = 0

    def __post_init__(self):
        if self.kind not in ("dense", "conv", "deconv"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.in_size < 1 or self.out_size < 1:
            raise ValueError("layer sizes must be positive")


def activate(x: Tensor, name: str) -> Tensor:
    if name == "leaky-relu":
        return ad.leaky_relu(x, LEAKY_SLOPE)
    if name == "tanh":
        return ad.tanh(x)
    return x


class Layer:
    def __init__(self, spec: LayerSpec, name: str, seed: int):
        self.spec = spec
        self.name = name
        if spec.kind == "dense":
            w = init_orthogonal(spec.out_size, spec.in_size, seed)
            b = np.zeros(spec.out_size)
        else:
            w = init_delta_orthogonal(spec, seed)
            b = np.zeros(spec.out_size)
        self.weight = Parameter(w, f"{name}.weight")
        self.bias = Parameter(b, f"{name}.bias")

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        s = self.spec
        if s.kind == "dense":
            y = ad.linear(x, self.weight, self.bias)
        elif s.kind == "conv":
            y = ad.conv2d(x, self.weight, self.bias, stride=s.stride, padding=CONV_PADDING)
        else:
            y = ad.conv_transpose2d(
                x, self.weight, self.bias, stride=s.stride, padding=CONV_PADDING,
                output_padding=s.output_padding,
            )
        return activate(y, s.activation)

    def check_input(self, shape: tuple[int, ...]) -> bool:
        s = self.spec
        if s.kind == "dense":
            return len(shape) == 2 and shape[1] == s.in_size
        return len(shape) == 4 and shape[1] == s.in_size


class Sequential:
    """A chain of layers; ``forward`` validates shapes layer by layer."""

    def __init__(self, specs: list[LayerSpec], name: str, seed: int):
        self.specs = list(specs)
        self.name = name
        self.layers = [Layer(s, f"{name}.{i}", seed + 7919 * i) for i, s in enumerate(specs)]

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, x) -> Tensor:
        return forward(self, x)


class ShapeError(ValueError):
    pass


def forward(net: Sequential, x, tape: Tape | None = None) -> Tensor:
    """Run ``net`` on ``x``; with ``tape`` given, every primitive is recorded on it."""
    if tape is not None:
        with tape:
            return forward(net, x)
    x = ad.as_tensor(x)
    for i, layer in enumerate(net.layers):
        if not layer.check_input(x.shape):
            raise ShapeError(
                f"{net.name}: layer {i} ({layer.spec.kind}, in={layer.spec.in_size}) "
                f"cannot take input of shape {x.shape}"
            )
        x = layer(x)
    return x


def flatten(x: Tensor) -> Tensor:
    return ad.reshape(x, (x.shape[0], -1))
