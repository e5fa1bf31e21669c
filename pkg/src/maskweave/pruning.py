"""One-shot global magnitude pruning, masks, masked retraining and random tickets."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .data import BatchStream
from .errors import AlignmentError, DomainError, UsageError
from .nncore import ParamSpace, TrainConfig, WeightVector, seeded_rng, train


class PruneMask:
    """Binary keep-mask over the prunable coordinates of a :class:`ParamSpace`.

    Bit ``i`` refers to the ``i``-th prunable coordinate in flat order;
    1 keeps the weight and 0 prunes it. Bits are packed little-endian into
    64-bit words so set operations and counts run word-parallel. Padding bits
    past ``d`` are always zero.
    """

    __slots__ = ("words", "space", "d")

    def __init__(self, words: np.ndarray, space: ParamSpace):
        d = space.d_prunable
        n_words = (d + 63) // 64
        words = np.ascontiguousarray(words, dtype="<u8")
        if words.shape != (n_words,):
            raise AlignmentError(f"expected {n_words} mask words for d={d}, got {words.shape}")
        self.words = words
        self.space = space
        self.d = d

    @classmethod
    def from_bits(cls, bits, space: ParamSpace) -> "PruneMask":
        bits = np.asarray(bits)
        if bits.shape != (space.d_prunable,):
            raise AlignmentError(
                f"mask of length {bits.shape} does not match d_prunable={space.d_prunable}")
        return cls.from_packed(np.packbits(bits.astype(bool), bitorder="little"), space)

    @classmethod
    def from_packed(cls, packed: np.ndarray, space: ParamSpace) -> "PruneMask":
        """From the byte payload (LSB first within bytes, ascending index)."""
        d = space.d_prunable
        packed = np.asarray(packed, dtype=np.uint8)
        n_bytes = (d + 7) // 8
        if packed.shape != (n_bytes,):
            raise AlignmentError(f"expected {n_bytes} packed bytes for d={d}")
        if d % 8 and packed[-1] >> (d % 8):
            raise AlignmentError("mask payload has bits set past d_prunable")
        buf = np.zeros(((d + 63) // 64) * 8, dtype=np.uint8)
        buf[:n_bytes] = packed
        return cls(buf.view("<u8"), space)

    @classmethod
    def ones(cls, space: ParamSpace) -> "PruneMask":
        return cls.from_bits(np.ones(space.d_prunable, dtype=bool), space)

    @classmethod
    def zeros(cls, space: ParamSpace) -> "PruneMask":
        return cls.from_bits(np.zeros(space.d_prunable, dtype=bool), space)

    @property
    def bits(self) -> np.ndarray:
        return np.unpackbits(self.words.view(np.uint8), count=self.d,
                             bitorder="little").astype(bool)

    def packed(self) -> bytes:
        return self.words.view(np.uint8)[:(self.d + 7) // 8].tobytes()

    @property
    def kept_count(self) -> int:
        return int(np.bitwise_count(self.words).sum())

    @property
    def pruned_count(self) -> int:
        return self.d - self.kept_count

    @property
    def sparsity(self) -> float:
        return self.pruned_count / self.d if self.d else 0.0

    def pruned_flat_index(self) -> np.ndarray:
        """Indices into the full weight vector of the pruned coordinates."""
        return self.space.prunable_index[~self.bits]

    def layer_zero_counts(self) -> dict:
        bits = self.bits
        return {name: int((~bits[a:b]).sum()) for name, a, b in self.space.prunable_ranges()}

    def __eq__(self, other):
        if not isinstance(other, PruneMask):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.words, other.words)

    def __repr__(self):
        return f"PruneMask(d={self.d}, pruned={self.pruned_count})"


def pruned_count_for(s: float, d: int) -> int:
    """``floor(s * d)``, tolerant of representation error in ``s``."""
    return int(math.floor(s * d + 1e-9))


def magnitude_prune(weights: WeightVector, sparsity: float) -> PruneMask:
    """Prune the ``floor(s*d)`` smallest-magnitude prunable weights in one shot.

    Ranking is global over every prunable coordinate; ties go to the lower
    flat index first.
    """
    if not 0.0 <= sparsity <= 1.0 or math.isnan(sparsity):
        raise DomainError(f"sparsity {sparsity} outside [0, 1]")
    space = weights.space
    mags = np.abs(weights.values[space.prunable_index])
    p = pruned_count_for(sparsity, space.d_prunable)
    order = np.argsort(mags, kind="stable")
    bits = np.ones(space.d_prunable, dtype=bool)
    bits[order[:p]] = False
    return PruneMask.from_bits(bits, space)


def apply_mask(weights: WeightVector, mask: PruneMask) -> WeightVector:
    if mask.space != weights.space:
        raise AlignmentError("mask and weights use different parameter spaces")
    values = weights.values.copy()
    values[mask.pruned_flat_index()] = 0.0
    return WeightVector(values, weights.space)


def random_ticket(mask: PruneMask, seed: int) -> PruneMask:
    """Shuffle the mask within each prunable layer, keeping per-layer zero counts."""
    bits = mask.bits
    out = bits.copy()
    for name, a, b in mask.space.prunable_ranges():
        rng = seeded_rng(seed, f"random_ticket/{name}")
        out[a:b] = bits[a:b][rng.permutation(b - a)]
    return PruneMask.from_bits(out, mask.space)


def train_masked(model, start_weights: WeightVector, mask: PruneMask, config: TrainConfig,
                 noise, dataset, start: int = 0, stop: Optional[int] = None) -> WeightVector:
    """Train ``mask * start_weights`` with pruned coordinates pinned at zero.

    Runs global iterations ``start .. stop-1`` (default: ``0 .. T-1``) so that
    learning-rate drops and data order line up with the unpruned schedule.
    """
    if mask.space != start_weights.space or model.space != start_weights.space:
        raise AlignmentError("model, weights and mask must share a parameter space")
    stop = config.total_iters if stop is None else stop
    if start > stop:
        raise UsageError(f"start {start} after stop {stop}")
    start_weights = apply_mask(start_weights, mask)
    if start == stop:
        return start_weights
    stream = BatchStream(dataset, noise, config.batch_size)
    return train(model, start_weights, config, stream, start, stop, mask=mask)
