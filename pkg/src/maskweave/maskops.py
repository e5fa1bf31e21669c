"""Mask set algebra and pruning-overlap statistics.

Kept sets compose with OR (union) and AND (intersection); pruned sets are
their complements, so the union keeps anything some sibling kept and prunes
only what every sibling pruned.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, UsageError
from .nncore import seeded_rng
from .pruning import PruneMask, pruned_count_for


@dataclass(frozen=True)
class OverlapReport:
    k: int
    per_sibling_sparsity: float
    pruned_count: int
    overlap_ratio: float
    chance_ratio: float
    mc_estimate: Optional[float] = None
    mc_stderr: Optional[float] = None

    def as_row(self) -> dict:
        return asdict(self)


def _check_masks(masks: Sequence[PruneMask]) -> list:
    masks = list(masks)
    if not masks:
        raise UsageError("need at least one mask")
    space = masks[0].space
    for m in masks[1:]:
        if m.space != space:
            raise UsageError("masks are defined over different parameter spaces")
    return masks


def union(masks: Sequence[PruneMask]) -> PruneMask:
    masks = _check_masks(masks)
    words = masks[0].words.copy()
    for m in masks[1:]:
        words |= m.words
    return PruneMask(words, masks[0].space)


def intersect(masks: Sequence[PruneMask]) -> PruneMask:
    masks = _check_masks(masks)
    words = masks[0].words.copy()
    for m in masks[1:]:
        words &= m.words
    return PruneMask(words, masks[0].space)


def common_pruned_count(masks: Sequence[PruneMask]) -> int:
    """Number of coordinates pruned by every mask."""
    return union(masks).pruned_count


def overlap_ratio(masks: Sequence[PruneMask]) -> float:
    """Fraction of each mask's ``p`` pruned weights that every mask prunes."""
    masks = _check_masks(masks)
    if len(masks) < 2:
        raise UsageError("overlap needs at least two masks")
    counts = {m.pruned_count for m in masks}
    if len(counts) != 1:
        raise UsageError(f"masks prune different numbers of weights: {sorted(counts)}")
    p = counts.pop()
    if p == 0:
        raise DomainError("overlap ratio undefined when nothing is pruned")
    return common_pruned_count(masks) / p


def chance_overlap(s: float, k: int) -> float:
    """Expected overlap ratio of ``k`` independent random masks at sparsity ``s``: s**(k-1)."""
    if not 0.0 < s <= 1.0:
        raise DomainError(f"sparsity {s} must lie in (0, 1]")
    if k < 1:
        raise DomainError("k must be >= 1")
    return float(s ** (k - 1))


def mc_chance_overlap(d: int, s: float, k: int, trials: int, seed: int,
                      method: str = "hypergeometric"):
    """Monte-Carlo estimate of the chance overlap ratio; returns ``(mean, stderr)``.

    Each trial draws ``k`` independent uniform ``p``-subsets of ``range(d)``
    and records ``|intersection| / p``. ``method="subsets"`` draws the subsets
    literally; ``"hypergeometric"`` samples the running intersection size
    directly (a fresh uniform ``p``-subset meets a fixed ``m``-set in a
    hypergeometric number of points), which has the same distribution and
    scales to ``d = 10**4`` with ``10**5`` trials.
    """
    p = pruned_count_for(s, d)
    if p < 1:
        raise DomainError(f"floor(s*d) = 0 for s={s}, d={d}")
    if trials < 1 or k < 1:
        raise UsageError("need trials >= 1 and k >= 1")
    rng = seeded_rng(seed, f"mc_chance/{method}")
    if method == "hypergeometric":
        inter = np.full(trials, p, dtype=np.int64)
        for _ in range(k - 1):
            inter = rng.hypergeometric(inter, d - inter, p)
    elif method == "subsets":
        inter = np.empty(trials, dtype=np.int64)
        for i in range(trials):
            common = np.ones(d, dtype=bool)
            for _ in range(k):
                member = np.zeros(d, dtype=bool)
                member[rng.choice(d, size=p, replace=False)] = True
                common &= member
            inter[i] = common.sum()
    else:
        raise UsageError(f"unknown method {method!r}")
    ratios = inter / p
    mean = float(ratios.mean())
    stderr = float(ratios.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return mean, stderr


def composed_sparsity(mask: PruneMask) -> float:
    return mask.sparsity


def overlap_report(masks: Sequence[PruneMask], s: float, mc_trials: int = 0,
                   mc_seed: int = 0) -> OverlapReport:
    """Overlap statistics for ``k >= 2`` sibling masks pruned to sparsity ``s``."""
    masks = _check_masks(masks)
    ratio = overlap_ratio(masks)
    k = len(masks)
    mc = (None, None)
    if mc_trials:
        mc = mc_chance_overlap(masks[0].d, s, k, mc_trials, mc_seed)
    return OverlapReport(k, float(s), masks[0].pruned_count, ratio, chance_overlap(s, k), *mc)
