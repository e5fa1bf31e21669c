"""Desk-scale architectures: ``mlp``, ``microconv`` and ``microresnet``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .nncore import (
    ChannelAffine,
    Conv3x3,
    Dense,
    GlobalAvgPool,
    ParamSpace,
    ReLU,
    Residual,
    WeightVector,
    seeded_rng,
)

ARCHITECTURES = ("mlp", "microconv", "microresnet")


@dataclass(frozen=True, eq=False)
class ModelGraph:
    arch: str
    layers: tuple
    input_dims: tuple
    class_count: int
    width: int
    space: ParamSpace
    skip: bool = True

    def spec(self) -> dict:
        """The arguments that rebuild this graph via :func:`build_model`."""
        return {"arch": self.arch, "input_dims": list(self.input_dims),
                "class_count": self.class_count, "width": self.width, "skip": self.skip}

    def describe(self) -> list:
        return [layer.describe() for layer in self.layers]


def _mlp(input_dims, class_count, width):
    if len(input_dims) != 1:
        raise UsageError(f"mlp takes vector inputs, got dims {input_dims}")
    n_in = input_dims[0]
    return [Dense("fc1", n_in, width), ReLU("relu1"),
            Dense("fc2", width, width), ReLU("relu2"),
            Dense("head", width, class_count)]


def _image_channels(arch, input_dims):
    if len(input_dims) != 3:
        raise UsageError(f"{arch} takes (channels, height, width) inputs, got {input_dims}")
    return input_dims[0]


def _microconv(input_dims, class_count, width):
    c = _image_channels("microconv", input_dims)
    return [Conv3x3("conv1", c, width), ChannelAffine("norm1", width), ReLU("relu1"),
            Conv3x3("conv2", width, width), ChannelAffine("norm2", width), ReLU("relu2"),
            GlobalAvgPool(), Dense("head", width, class_count)]


def _microresnet(input_dims, class_count, width, skip):
    c = _image_channels("microresnet", input_dims)
    layers = [Conv3x3("stem", c, width), ChannelAffine("stem_norm", width), ReLU("stem_relu")]
    for b in (1, 2):
        body = [Conv3x3(f"block{b}.conv1", width, width), ChannelAffine(f"block{b}.norm1", width),
                ReLU(f"block{b}.relu1"),
                Conv3x3(f"block{b}.conv2", width, width), ChannelAffine(f"block{b}.norm2", width)]
        layers.append(Residual(f"block{b}", body, skip=skip))
    layers += [GlobalAvgPool(), Dense("head", width, class_count)]
    return layers


def build_model(arch: str, input_dims, class_count: int, width: int, skip: bool = True):
    """Return ``(graph, space)`` for one of :data:`ARCHITECTURES`.

    Weight matrices and conv kernels are prunable; biases and the per-channel
    affine parameters are not. ``skip=False`` removes the identity branches of
    ``microresnet`` (which carry no parameters).
    """
    input_dims = tuple(int(d) for d in np.atleast_1d(input_dims))
    if width < 1:
        raise UsageError("width must be >= 1")
    if class_count < 1 or any(d < 1 for d in input_dims):
        raise UsageError("dimensions must be positive")
    if arch == "mlp":
        layers = _mlp(input_dims, class_count, width)
    elif arch == "microconv":
        layers = _microconv(input_dims, class_count, width)
    elif arch == "microresnet":
        layers = _microresnet(input_dims, class_count, width, skip)
    else:
        raise UsageError(f"unknown architecture {arch!r}; choose from {', '.join(ARCHITECTURES)}")

    shape = input_dims
    for layer in layers:
        shape = layer.out_shape(shape)
    if shape != (class_count,):
        raise UsageError(f"{arch} produces outputs of shape {shape}")

    space = ParamSpace.from_blocks(
        (name, shp, prunable) for layer in layers
        for name, shp, prunable, _ in layer.param_blocks())
    graph = ModelGraph(arch, tuple(layers), input_dims, int(class_count), int(width), space,
                       skip if arch == "microresnet" else True)
    return graph, space


def graph_from_spec(spec: dict) -> ModelGraph:
    graph, _ = build_model(spec["arch"], spec["input_dims"], spec["class_count"],
                           spec["width"], spec.get("skip", True))
    return graph


def fan_in_std(fan_in: int) -> float:
    """He-normal standard deviation for ReLU networks."""
    return float(np.sqrt(2.0 / fan_in))


def init_weights(space: ParamSpace, graph: ModelGraph, seed: int) -> WeightVector:
    """Fan-in scaled normal weights, zero biases/shifts, unit affine scales."""
    if graph.space != space:
        raise UsageError("space does not belong to graph")
    values = np.zeros(space.d_total)
    for layer in graph.layers:
        for name, shape, _, init in layer.param_blocks():
            view = space.view(values, name)
            kind = init[0]
            if kind == "fan_in":
                rng = seeded_rng(seed, f"init/{name}")
                view[...] = rng.standard_normal(shape) * fan_in_std(init[1])
            elif kind == "ones":
                view[...] = 1.0
    return WeightVector(values, space)
