"""Small float64 neural-network engine with hand-written backward passes.

Weights live in one flat vector described by a :class:`ParamSpace`; each layer
reads views into that vector, so pruning masks, checkpoints and SGD all work on
the same 1-D layout.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import AlignmentError, NumericError, UsageError

DTYPE = np.float64


# ---------------------------------------------------------------------------
# parameter layout


@dataclass(frozen=True)
class LayerEntry:
    name: str
    shape: tuple
    offset: int
    prunable: bool

    @property
    def size(self) -> int:
        return int(math.prod(self.shape))

    @property
    def stop(self) -> int:
        return self.offset + self.size


@dataclass(frozen=True)
class ParamSpace:
    """Ordered table of named parameter blocks inside a flat vector."""

    layers: tuple

    def __post_init__(self):
        pos = 0
        names = set()
        for entry in self.layers:
            if entry.offset != pos:
                raise AlignmentError(
                    f"layer {entry.name!r} starts at {entry.offset}, expected {pos}")
            if entry.name in names:
                raise AlignmentError(f"duplicate layer name {entry.name!r}")
            names.add(entry.name)
            pos = entry.stop

    @classmethod
    def from_blocks(cls, blocks: Iterable[tuple]) -> "ParamSpace":
        """Build from ``(name, shape, prunable)`` triples laid out back to back."""
        layers = []
        offset = 0
        for name, shape, prunable in blocks:
            entry = LayerEntry(name, tuple(int(s) for s in shape), offset, bool(prunable))
            layers.append(entry)
            offset = entry.stop
        return cls(tuple(layers))

    @property
    def d_total(self) -> int:
        return sum(e.size for e in self.layers)

    @property
    def d_prunable(self) -> int:
        return sum(e.size for e in self.layers if e.prunable)

    @property
    def prunable_index(self) -> np.ndarray:
        """Flat indices of prunable coordinates, ascending."""
        parts = [np.arange(e.offset, e.stop) for e in self.layers if e.prunable]
        if not parts:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(parts).astype(np.int64)

    def prunable_ranges(self) -> list:
        """``(name, start, stop)`` ranges of each prunable layer in mask coordinates."""
        out = []
        pos = 0
        for e in self.layers:
            if e.prunable:
                out.append((e.name, pos, pos + e.size))
                pos += e.size
        return out

    def entry(self, name: str) -> LayerEntry:
        for e in self.layers:
            if e.name == name:
                return e
        raise KeyError(name)

    def view(self, flat: np.ndarray, name: str) -> np.ndarray:
        e = self.entry(name)
        return flat[e.offset:e.stop].reshape(e.shape)

    def to_dict(self) -> list:
        return [
            {"name": e.name, "shape": list(e.shape), "offset": e.offset,
             "prunable": e.prunable}
            for e in self.layers
        ]

    @classmethod
    def from_dict(cls, table: Sequence[dict]) -> "ParamSpace":
        return cls(tuple(
            LayerEntry(str(r["name"]), tuple(int(s) for s in r["shape"]),
                       int(r["offset"]), bool(r["prunable"]))
            for r in table
        ))


@dataclass(frozen=True, eq=False)
class WeightVector:
    values: np.ndarray
    space: ParamSpace

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=DTYPE)
        if values.ndim != 1 or values.shape[0] != self.space.d_total:
            raise AlignmentError(
                f"weight vector of shape {values.shape} does not match "
                f"d_total={self.space.d_total}")
        if not np.all(np.isfinite(values)):
            raise NumericError("weight vector contains non-finite entries")
        object.__setattr__(self, "values", values)

    def copy(self) -> "WeightVector":
        return WeightVector(self.values.copy(), self.space)

    def layer(self, name: str) -> np.ndarray:
        return self.space.view(self.values, name)

    def __eq__(self, other):
        if not isinstance(other, WeightVector):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.values, other.values)

    def zeros_like(self) -> "WeightVector":
        return WeightVector(np.zeros_like(self.values), self.space)


@dataclass(frozen=True)
class TrainConfig:
    total_iters: int
    batch_size: int = 32
    learning_rate: float = 0.1
    momentum: float = 0.9
    lr_drops: tuple = ()

    def __post_init__(self):
        if self.total_iters < 0:
            raise UsageError("total_iters must be >= 0")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise UsageError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise UsageError("momentum must lie in [0, 1)")
        drops = tuple((int(i), float(m)) for i, m in self.lr_drops)
        object.__setattr__(self, "lr_drops", tuple(sorted(drops)))

    def lr_at(self, it: int) -> float:
        lr = self.learning_rate
        for drop_iter, mult in self.lr_drops:
            if it >= drop_iter:
                lr *= mult
        return lr

    def to_dict(self) -> dict:
        return {"total_iters": self.total_iters, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "momentum": self.momentum,
                "lr_drops": [list(d) for d in self.lr_drops]}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(int(d["total_iters"]), int(d.get("batch_size", 32)),
                   float(d.get("learning_rate", 0.1)), float(d.get("momentum", 0.9)),
                   tuple(tuple(x) for x in d.get("lr_drops", ())))


@dataclass(frozen=True, eq=False)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise AlignmentError(
                f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels")

    def __len__(self):
        return int(self.labels.shape[0])


# ---------------------------------------------------------------------------
# random streams


def stream_seed(seed: int, label: str) -> int:
    """sha256 over ``"<seed>/<label>"``, first 16 bytes read little-endian."""
    digest = hashlib.sha256(f"{int(seed)}/{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def seeded_rng(seed: int, stream_label: str) -> np.random.Generator:
    """PCG64 generator keyed by ``(seed, stream_label)``.

    Streams for different labels are derived independently via
    :func:`stream_seed`; the same pair always yields the same sequence.
    """
    return np.random.Generator(np.random.PCG64(stream_seed(seed, stream_label)))


# ---------------------------------------------------------------------------
# layers
#
# Each layer declares its parameter blocks as (suffix, shape, prunable, init)
# and implements forward(x, params) -> (y, cache) and
# backward(dy, cache, params, grads) -> dx, writing into grads views.


class Layer:
    name = ""

    def param_blocks(self) -> list:
        return []

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def forward(self, x, params):
        raise NotImplementedError

    def backward(self, dy, cache, params, grads):
        raise NotImplementedError

    def describe(self) -> dict:
        return {"type": type(self).__name__, "name": self.name}


class Dense(Layer):
    def __init__(self, name: str, n_in: int, n_out: int):
        self.name, self.n_in, self.n_out = name, n_in, n_out

    def param_blocks(self):
        return [(f"{self.name}.weight", (self.n_in, self.n_out), True, ("fan_in", self.n_in)),
                (f"{self.name}.bias", (self.n_out,), False, ("zeros",))]

    def out_shape(self, in_shape):
        if in_shape != (self.n_in,):
            raise AlignmentError(f"{self.name}: expected input {(self.n_in,)}, got {in_shape}")
        return (self.n_out,)

    def forward(self, x, params):
        w = params[f"{self.name}.weight"]
        b = params[f"{self.name}.bias"]
        return x @ w + b, x

    def backward(self, dy, x, params, grads):
        grads[f"{self.name}.weight"][...] += x.T @ dy
        grads[f"{self.name}.bias"][...] += dy.sum(axis=0)
        return dy @ params[f"{self.name}.weight"].T


class Conv3x3(Layer):
    """Stride-1, zero-padded 3x3 convolution without bias (NCHW)."""

    def __init__(self, name: str, c_in: int, c_out: int):
        self.name, self.c_in, self.c_out = name, c_in, c_out

    def param_blocks(self):
        return [(f"{self.name}.kernel", (self.c_out, self.c_in, 3, 3), True,
                 ("fan_in", self.c_in * 9))]

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.c_in:
            raise AlignmentError(
                f"{self.name}: expected {self.c_in} input channels, got {in_shape}")
        return (self.c_out,) + tuple(in_shape[1:])

    def forward(self, x, params):
        k = params[f"{self.name}.kernel"]
        n, c, h, w = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        # (N, C, H, W, 3, 3) -> (N, H, W, C*9)
        cols = sliding_window_view(xp, (3, 3), axis=(2, 3))
        cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n, h, w, c * 9)
        out = cols @ k.reshape(self.c_out, -1).T
        return out.transpose(0, 3, 1, 2), (cols, x.shape)

    def backward(self, dy, cache, params, grads):
        cols, (n, c, h, w) = cache
        k = params[f"{self.name}.kernel"]
        dy_l = dy.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        grads[f"{self.name}.kernel"][...] += (
            dy_l.T @ cols.reshape(-1, c * 9)).reshape(k.shape)
        dcols = (dy_l @ k.reshape(self.c_out, -1)).reshape(n, h, w, c, 3, 3)
        dxp = np.zeros((n, c, h + 2, w + 2), dtype=DTYPE)
        for i in range(3):
            for j in range(3):
                dxp[:, :, i:i + h, j:j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, 1:-1, 1:-1]


class ChannelAffine(Layer):
    """Per-channel scale and shift; normalization without batch statistics."""

    def __init__(self, name: str, channels: int):
        self.name, self.channels = name, channels

    def param_blocks(self):
        return [(f"{self.name}.scale", (self.channels,), False, ("ones",)),
                (f"{self.name}.shift", (self.channels,), False, ("zeros",))]

    def forward(self, x, params):
        g = params[f"{self.name}.scale"][None, :, None, None]
        b = params[f"{self.name}.shift"][None, :, None, None]
        return x * g + b, x

    def backward(self, dy, x, params, grads):
        grads[f"{self.name}.scale"][...] += (dy * x).sum(axis=(0, 2, 3))
        grads[f"{self.name}.shift"][...] += dy.sum(axis=(0, 2, 3))
        return dy * params[f"{self.name}.scale"][None, :, None, None]


class ReLU(Layer):
    def __init__(self, name: str = "relu"):
        self.name = name

    def forward(self, x, params):
        keep = x > 0
        return np.where(keep, x, 0.0), keep

    def backward(self, dy, keep, params, grads):
        return np.where(keep, dy, 0.0)


class GlobalAvgPool(Layer):
    def __init__(self, name: str = "pool"):
        self.name = name

    def out_shape(self, in_shape):
        return (in_shape[0],)

    def forward(self, x, params):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, dy, shape, params, grads):
        n, c, h, w = shape
        return np.broadcast_to(dy[:, :, None, None] / (h * w), shape).copy()


class Residual(Layer):
    """``relu(body(x) + x)``; with ``skip=False`` the identity branch is dropped."""

    def __init__(self, name: str, body: Sequence[Layer], skip: bool = True):
        self.name, self.body, self.skip = name, list(body), skip

    def param_blocks(self):
        return [b for layer in self.body for b in layer.param_blocks()]

    def out_shape(self, in_shape):
        shape = in_shape
        for layer in self.body:
            shape = layer.out_shape(shape)
        if self.skip and shape != tuple(in_shape):
            raise AlignmentError(f"{self.name}: identity skip needs matching shapes")
        return shape

    def forward(self, x, params):
        h = x
        caches = []
        for layer in self.body:
            h, c = layer.forward(h, params)
            caches.append(c)
        if self.skip:
            h = h + x
        keep = h > 0
        return np.where(keep, h, 0.0), (caches, keep)

    def backward(self, dy, cache, params, grads):
        caches, keep = cache
        dh = np.where(keep, dy, 0.0)
        dx = dh
        for layer, c in zip(reversed(self.body), reversed(caches)):
            dx = layer.backward(dx, c, params, grads)
        if self.skip:
            dx = dx + dh
        return dx

    def describe(self):
        return {"type": "Residual", "name": self.name, "skip": self.skip,
                "body": [layer.describe() for layer in self.body]}


# ---------------------------------------------------------------------------
# graph evaluation


def _param_views(space: ParamSpace, flat: np.ndarray) -> dict:
    return {e.name: flat[e.offset:e.stop].reshape(e.shape) for e in space.layers}


def _check_alignment(graph, weights: WeightVector):
    if weights.space != graph.space:
        raise AlignmentError("weights are not laid out for this model")


def forward(graph, weights: WeightVector, inputs: np.ndarray) -> np.ndarray:
    """Logits for ``inputs`` (leading batch axis)."""
    _check_alignment(graph, weights)
    x = np.asarray(inputs, dtype=DTYPE)
    if tuple(x.shape[1:]) != tuple(graph.input_dims):
        raise AlignmentError(
            f"batch inputs have shape {x.shape[1:]}, model expects {tuple(graph.input_dims)}")
    params = _param_views(graph.space, weights.values)
    for layer in graph.layers:
        x, _ = layer.forward(x, params)
    return x


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits (log-sum-exp form)."""
    n = logits.shape[0]
    shift = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=1))
    logp = shift - lse[:, None]
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    dlogits = np.exp(logp)
    dlogits[rows, labels] -= 1.0
    return float(loss), dlogits / n


def _check_batch(graph, batch: Batch):
    if len(batch) == 0:
        raise UsageError("empty batch")
    if tuple(batch.inputs.shape[1:]) != tuple(graph.input_dims):
        raise AlignmentError(
            f"batch inputs have shape {batch.inputs.shape[1:]}, "
            f"model expects {tuple(graph.input_dims)}")
    labels = np.asarray(batch.labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= graph.class_count:
        raise AlignmentError("label outside the model's class range")
    return labels


def _loss_and_grad_flat(graph, flat: np.ndarray, batch: Batch, iteration=None):
    labels = _check_batch(graph, batch)
    x = np.asarray(batch.inputs, dtype=DTYPE)
    params = _param_views(graph.space, flat)
    caches = []
    for layer in graph.layers:
        x, c = layer.forward(x, params)
        caches.append(c)
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite logits", iteration)
    loss, dx = softmax_xent(x, labels)
    grad_flat = np.zeros(graph.space.d_total, dtype=DTYPE)
    grads = _param_views(graph.space, grad_flat)
    for layer, c in zip(reversed(graph.layers), reversed(caches)):
        dx = layer.backward(dx, c, params, grads)
    if not (math.isfinite(loss) and np.all(np.isfinite(grad_flat))):
        raise NumericError("non-finite loss or gradient", iteration)
    return loss, grad_flat


def loss_and_grad(graph, weights: WeightVector, batch: Batch, iteration: Optional[int] = None):
    """Mean softmax cross-entropy over ``batch`` and its exact gradient."""
    _check_alignment(graph, weights)
    loss, grad = _loss_and_grad_flat(graph, weights.values, batch, iteration)
    return loss, WeightVector(grad, graph.space)


# ---------------------------------------------------------------------------
# optimisation


def _sgd_update(w: np.ndarray, v: np.ndarray, g: np.ndarray, lr: float, momentum: float,
                dead: Optional[np.ndarray]):
    """In-place momentum update; ``dead`` indexes coordinates pinned to zero."""
    if dead is not None:
        g[dead] = 0.0
    v *= momentum
    v += g
    w -= lr * v
    if dead is not None:
        w[dead] = 0.0
        v[dead] = 0.0


def _dead_index(mask, space: ParamSpace) -> Optional[np.ndarray]:
    if mask is None:
        return None
    if mask.space != space:
        raise AlignmentError("mask belongs to a different parameter space")
    return mask.pruned_flat_index()


def sgd_step(weights: WeightVector, velocity: WeightVector, grad: WeightVector,
             config: TrainConfig, iteration: int, mask=None):
    """One heavy-ball step: ``v' = m v + g``, ``w' = w - lr(it) v'``.

    Masked-out prunable coordinates of the results are exactly zero.
    """
    space = weights.space
    if velocity.space != space or grad.space != space:
        raise AlignmentError("weights, velocity and gradient use different layouts")
    if not 0 <= iteration < config.total_iters:
        raise UsageError(f"iteration {iteration} outside [0, {config.total_iters})")
    w = weights.values.copy()
    v = velocity.values.copy()
    g = grad.values.copy()
    _sgd_update(w, v, g, config.lr_at(iteration), config.momentum, _dead_index(mask, space))
    return WeightVector(w, space), WeightVector(v, space)


def train(graph, weights: WeightVector, config: TrainConfig,
          batch_for: Callable[[int], Batch], start: int, stop: int, mask=None,
          on_step: Optional[Callable[[int, float, np.ndarray], None]] = None) -> WeightVector:
    """Run iterations ``start .. stop-1`` from ``weights`` with zero initial velocity.

    ``batch_for(it)`` supplies the minibatch for global iteration ``it``;
    ``on_step(it, loss, w)`` is called after each update.
    """
    _check_alignment(graph, weights)
    if not 0 <= start <= stop <= config.total_iters:
        raise UsageError(f"bad iteration window [{start}, {stop}) for T={config.total_iters}")
    space = graph.space
    dead = _dead_index(mask, space)
    w = weights.values.copy()
    if dead is not None:
        w[dead] = 0.0
    v = np.zeros_like(w)
    # overflow surfaces as a NumericError from the finiteness checks
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(start, stop):
            loss, grad = _loss_and_grad_flat(graph, w, batch_for(it), iteration=it)
            _sgd_update(w, v, grad, config.lr_at(it), config.momentum, dead)
            if on_step is not None:
                on_step(it, loss, w)
    if not np.all(np.isfinite(w)):
        raise NumericError("training diverged", stop)
    return WeightVector(w, space)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``max|a-b| / max(max|a|, max|b|)``; 0 when both are identically zero."""
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - b))) / scale


def finite_difference_grad(graph, weights: WeightVector, batch: Batch, step: float = 1e-6):
    """Central-difference gradient, one coordinate at a time."""
    base = weights.values
    out = np.zeros_like(base)
    probe = base.copy()
    for i in range(base.shape[0]):
        probe[i] = base[i] + step
        up = _loss_only(graph, probe, batch)
        probe[i] = base[i] - step
        down = _loss_only(graph, probe, batch)
        probe[i] = base[i]
        out[i] = (up - down) / (2 * step)
    return out


def _loss_only(graph, flat: np.ndarray, batch: Batch) -> float:
    params = _param_views(graph.space, flat)
    x = np.asarray(batch.inputs, dtype=DTYPE)
    for layer in graph.layers:
        x, _ = layer.forward(x, params)
    loss, _ = softmax_xent(x, np.asarray(batch.labels, dtype=np.int64))
    return loss
