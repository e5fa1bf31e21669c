"""Pretrain, branch siblings, prune, compose, rewind, retrain, evaluate.

Every stage writes one artifact atomically and records the digest of what it
was built from. A rerun reuses verified artifacts, so an interrupted sweep
resumes where it stopped and a finished one is left untouched.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import maskops
from .artifacts import (
    Checkpoint,
    MaskFile,
    atomic_write,
    canonical_json,
    read_checkpoint,
    read_mask,
    sha256_hex,
    write_checkpoint,
    write_mask,
)
from .data import BatchStream, Dataset, NoiseSpec, load_dataset
from .errors import CorruptionError, UsageError
from .models import ARCHITECTURES, ModelGraph, build_model, init_weights
from .nncore import TrainConfig, WeightVector, forward, stream_seed, train
from .pruning import magnitude_prune, random_ticket, train_masked

log = logging.getLogger(__name__)

STRATEGIES = ("union", "intersect", "oneshot_baseline", "random_ticket")
DEFAULT_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95)
# Full-scale ResNet-20/CIFAR-10 budget (63k iterations at batch 128) and the
# branch points measured against it.
FULL_SCALE_ITERS = 63_000
FULL_SCALE_BRANCH_POINTS = (0, 500, 2000)

RESULT_COLUMNS = ("strategy", "k", "t", "per_sibling_sparsity", "composed_sparsity",
                  "test_accuracy", "retrain_seed", "seconds")
OVERLAP_COLUMNS = ("k", "t", "per_sibling_sparsity", "pruned_count", "overlap_ratio",
                   "chance_ratio", "mc_estimate", "mc_stderr")


def derive_seed(seed: int, label: str) -> int:
    """63-bit child seed of ``seed`` for ``label``."""
    return stream_seed(seed, label) >> 65


def scaled_branch_point(full_iters: int, total_iters: int) -> int:
    """Map a full-scale pretraining length onto a desk-scale budget."""
    return int(round(full_iters * total_iters / FULL_SCALE_ITERS))


@dataclass(frozen=True)
class ExperimentPlan:
    arch: str
    width: int
    dataset: dict
    init_seed: int
    pretrain_iters: int
    sibling_count: int
    noise_specs: tuple
    sparsities: tuple
    strategies: tuple
    train: TrainConfig
    retrain_seed: int
    augment_strength: float = 0.0
    mc_trials: int = 0
    name: str = ""
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise UsageError(f"unknown architecture {self.arch!r}")
        if self.sibling_count < 1:
            raise UsageError("sibling_count must be >= 1")
        if len(self.noise_specs) != self.sibling_count:
            raise UsageError(f"{len(self.noise_specs)} noise specs for {self.sibling_count} siblings")
        if len(set(self.noise_specs)) != len(self.noise_specs):
            raise UsageError("sibling noise specs must be pairwise distinct")
        if not 0 <= self.pretrain_iters <= self.train.total_iters:
            raise UsageError("pretrain_iters must lie in [0, total_iters]")
        grid = list(self.sparsities)
        if not grid:
            raise UsageError("sparsity grid is empty")
        if any(not 0.0 <= s <= 1.0 for s in grid):
            raise UsageError("sparsities must lie in [0, 1]")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise UsageError("sparsity grid must be strictly increasing")
        bad = set(self.strategies) - set(STRATEGIES)
        if bad or not self.strategies:
            raise UsageError(f"strategies must be a non-empty subset of {STRATEGIES}")
        if self.augment_strength < 0 or self.mc_trials < 0:
            raise UsageError("augment_strength and mc_trials must be >= 0")

    @property
    def k(self) -> int:
        return self.sibling_count

    @property
    def t(self) -> int:
        return self.pretrain_iters

    def to_dict(self, include_output: bool = False) -> dict:
        d = {"arch": self.arch, "width": self.width, "dataset": dict(self.dataset),
             "init_seed": self.init_seed, "pretrain_iters": self.pretrain_iters,
             "sibling_count": self.sibling_count,
             "noise_specs": [n.to_dict() for n in self.noise_specs],
             "sparsities": [float(s) for s in self.sparsities],
             "strategies": list(self.strategies), "train": self.train.to_dict(),
             "retrain_seed": self.retrain_seed, "augment_strength": self.augment_strength,
             "mc_trials": self.mc_trials, "name": self.name}
        if include_output and self.output_dir is not None:
            d["output_dir"] = str(self.output_dir)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        try:
            return cls(
                arch=d["arch"], width=int(d["width"]), dataset=dict(d["dataset"]),
                init_seed=int(d["init_seed"]), pretrain_iters=int(d["pretrain_iters"]),
                sibling_count=int(d["sibling_count"]),
                noise_specs=tuple(NoiseSpec.from_dict(n) for n in d["noise_specs"]),
                sparsities=tuple(float(s) for s in d["sparsities"]),
                strategies=tuple(d["strategies"]), train=TrainConfig.from_dict(d["train"]),
                retrain_seed=int(d["retrain_seed"]),
                augment_strength=float(d.get("augment_strength", 0.0)),
                mc_trials=int(d.get("mc_trials", 0)), name=str(d.get("name", "")),
                output_dir=d.get("output_dir"))
        except KeyError as exc:
            raise UsageError(f"plan is missing field {exc}") from None

    def manifest(self) -> bytes:
        """Canonical manifest bytes; ``output_dir`` is excluded so digests are location-free."""
        return canonical_json(self.to_dict())

    @property
    def digest(self) -> str:
        return sha256_hex(self.manifest())

    @property
    def pretrain_noise(self) -> NoiseSpec:
        return NoiseSpec(derive_seed(self.init_seed, "pretrain/order"),
                         derive_seed(self.init_seed, "pretrain/augment"), self.augment_strength)

    @property
    def retrain_noise(self) -> NoiseSpec:
        return NoiseSpec(self.retrain_seed, derive_seed(self.retrain_seed, "retrain/augment"),
                         self.augment_strength)

    @property
    def random_ticket_seed(self) -> int:
        return derive_seed(self.init_seed, "random_ticket")


def make_plan(arch: str = "mlp", width: int = 32, dataset: Optional[dict] = None,
              seed: int = 0, pretrain_iters: int = 0, k: int = 2,
              sparsities: Sequence[float] = DEFAULT_GRID,
              strategies: Sequence[str] = STRATEGIES, total_iters: int = 4000,
              batch_size: int = 32, learning_rate: float = 0.1, momentum: float = 0.9,
              lr_drops=(), augment_strength: float = 0.02, mc_trials: int = 10_000,
              name: Optional[str] = None, output_dir=None) -> ExperimentPlan:
    """Plan with sibling noise seeds derived from ``seed``."""
    if dataset is None:
        dataset = {"name": "spirals", "n_per_class": 500, "noise_sd": 0.05, "seed": 0}
    noise = tuple(NoiseSpec(derive_seed(seed, f"sibling{i}/order"),
                            derive_seed(seed, f"sibling{i}/augment"), augment_strength)
                  for i in range(1, k + 1))
    return ExperimentPlan(
        arch=arch, width=width, dataset=dict(dataset), init_seed=seed,
        pretrain_iters=pretrain_iters, sibling_count=k, noise_specs=noise,
        sparsities=tuple(sparsities), strategies=tuple(strategies),
        train=TrainConfig(total_iters, batch_size, learning_rate, momentum, tuple(lr_drops)),
        retrain_seed=derive_seed(seed, "retrain"), augment_strength=augment_strength,
        mc_trials=mc_trials, name=name or f"{arch}_t{pretrain_iters}_k{k}_seed{seed}",
        output_dir=None if output_dir is None else str(output_dir))


def desk_plans(total_iters: int = 4000, seed: int = 0, **kwargs) -> list:
    """Branch points {0, 500, 2000} scaled to ``total_iters`` for k=2, and k in {4, 10}
    at the largest branch point."""
    ts = [scaled_branch_point(p, total_iters) for p in FULL_SCALE_BRANCH_POINTS]
    plans = [make_plan(pretrain_iters=t, k=2, seed=seed, total_iters=total_iters, **kwargs)
             for t in ts]
    plans += [make_plan(pretrain_iters=ts[-1], k=k, seed=seed, total_iters=total_iters, **kwargs)
              for k in (4, 10)]
    return plans


# ---------------------------------------------------------------------------
# per-plan context


@dataclass(eq=False)
class _Context:
    plan: ExperimentPlan
    graph: ModelGraph
    train_set: Dataset
    test_set: Dataset


_CONTEXTS: dict = {}


def context_for(plan: ExperimentPlan) -> _Context:
    key = plan.digest
    if key not in _CONTEXTS:
        train_set, test_set = load_dataset(plan.dataset, plan.arch)
        graph, _ = build_model(plan.arch, train_set.feature_dims, train_set.class_count,
                               plan.width)
        _CONTEXTS.clear()
        _CONTEXTS[key] = _Context(plan, graph, train_set, test_set)
    return _CONTEXTS[key]


def evaluate(weights: WeightVector, model: ModelGraph, dataset: Dataset,
             chunk: int = 1024) -> float:
    """Top-1 accuracy; ``argmax`` resolves logit ties toward the lower class."""
    correct = 0
    for a in range(0, len(dataset), chunk):
        logits = forward(model, weights, dataset.inputs[a:a + chunk])
        correct += int((logits.argmax(axis=1) == dataset.labels[a:a + chunk]).sum())
    return correct / len(dataset)


def _ckpt_info(plan: ExperimentPlan, graph: ModelGraph, role: str, **seeds) -> dict:
    return {"role": role, "model": graph.spec(), "seeds": seeds}


def pretrain(plan: ExperimentPlan) -> Checkpoint:
    """``θ_t``: ``t`` shared iterations from ``init_weights(init_seed)``."""
    ctx = context_for(plan)
    w0 = init_weights(ctx.graph.space, ctx.graph, plan.init_seed)
    noise = plan.pretrain_noise
    w = w0
    if plan.t > 0:
        stream = BatchStream(ctx.train_set, noise, plan.train.batch_size)
        w = train(ctx.graph, w0, plan.train, stream, 0, plan.t)
    info = _ckpt_info(plan, ctx.graph, "pretrain", init_seed=plan.init_seed, **noise.to_dict())
    return Checkpoint(w, plan.t, plan.digest, None, info)


def train_sibling(checkpoint: Checkpoint, noise: NoiseSpec, config: TrainConfig,
                  model: ModelGraph, dataset: Dataset) -> WeightVector:
    """Continue from ``checkpoint`` for the remaining ``T - t`` iterations under ``noise``."""
    if checkpoint.iteration > config.total_iters:
        raise UsageError("checkpoint is past the end of training")
    if checkpoint.iteration == config.total_iters:
        return checkpoint.weights.copy()
    stream = BatchStream(dataset, noise, config.batch_size)
    return train(model, checkpoint.weights, config, stream, checkpoint.iteration,
                 config.total_iters)


def make_sibling(plan: ExperimentPlan, pre: Checkpoint, index: int) -> Checkpoint:
    """Checkpoint of sibling ``index`` (1-based) trained to completion."""
    if not 1 <= index <= plan.k:
        raise UsageError(f"sibling index {index} outside 1..{plan.k}")
    ctx = context_for(plan)
    noise = plan.noise_specs[index - 1]
    w = train_sibling(pre, noise, plan.train, ctx.graph, ctx.train_set)
    info = _ckpt_info(plan, ctx.graph, "sibling", sibling=index, **noise.to_dict())
    return Checkpoint(w, plan.train.total_iters, plan.digest, pre.digest, info)


def sibling_mask(sib: Checkpoint, s: float) -> MaskFile:
    mask = magnitude_prune(sib.weights, s)
    return MaskFile(mask, "sibling", s, [sib.digest],
                    {"sibling": sib.info.get("sibling")})


def compose(strategy: str, masks: Sequence[MaskFile], seed: Optional[int] = None) -> MaskFile:
    """Build a strategy mask from sibling masks (the baseline and random ticket use the first)."""
    if not masks:
        raise UsageError("compose needs at least one mask")
    s_values = {m.per_sibling_sparsity for m in masks}
    if len(s_values) != 1:
        raise UsageError(f"masks were pruned at different sparsities: {sorted(s_values)}")
    s = s_values.pop()
    plain = [m.mask for m in masks]
    info = {}
    if strategy == "union":
        mask, parents = maskops.union(plain), [m.digest for m in masks]
    elif strategy == "intersect":
        mask, parents = maskops.intersect(plain), [m.digest for m in masks]
    elif strategy == "oneshot_baseline":
        mask, parents = plain[0], [masks[0].digest]
    elif strategy == "random_ticket":
        if seed is None:
            raise UsageError("random_ticket needs a seed")
        mask, parents = random_ticket(plain[0], seed), [masks[0].digest]
        info["seed"] = int(seed)
    else:
        raise UsageError(f"unknown strategy {strategy!r}")
    return MaskFile(mask, strategy, s, parents, info)


def retrain(plan: ExperimentPlan, pre: Checkpoint, mf: MaskFile):
    """Rewind to ``θ_t``, apply the mask, train ``T - t`` iterations; returns
    ``(checkpoint, accuracy)``."""
    ctx = context_for(plan)
    noise = plan.retrain_noise
    w = train_masked(ctx.graph, pre.weights, mf.mask, plan.train, noise, ctx.train_set,
                     start=pre.iteration, stop=plan.train.total_iters)
    info = _ckpt_info(plan, ctx.graph, "retrain", strategy=mf.strategy, mask_digest=mf.digest,
                      **noise.to_dict())
    ckpt = Checkpoint(w, plan.train.total_iters, plan.digest, pre.digest, info)
    return ckpt, evaluate(w, ctx.graph, ctx.test_set)


# ---------------------------------------------------------------------------
# artifact layout and resumable execution


@dataclass(frozen=True)
class ResultRecord:
    strategy: str
    k: int
    t: int
    per_sibling_sparsity: float
    composed_sparsity: float
    test_accuracy: float
    retrain_seed: int
    seconds: float = 0.0

    @property
    def key(self):
        return (self.per_sibling_sparsity, self.strategy)

    def as_row(self) -> list:
        return [self.strategy, str(self.k), str(self.t), repr(self.per_sibling_sparsity),
                repr(self.composed_sparsity), repr(self.test_accuracy),
                str(self.retrain_seed), f"{self.seconds:.3f}"]

    @classmethod
    def from_row(cls, row: dict) -> "ResultRecord":
        return cls(row["strategy"], int(row["k"]), int(row["t"]),
                   float(row["per_sibling_sparsity"]), float(row["composed_sparsity"]),
                   float(row["test_accuracy"]), int(row["retrain_seed"]),
                   float(row.get("seconds") or 0.0))


class Layout:
    def __init__(self, root):
        self.root = Path(root)

    plan = property(lambda self: self.root / "plan.json")
    pretrain = property(lambda self: self.root / "checkpoints" / "pretrain.ckpt")
    overlap_csv = property(lambda self: self.root / "overlap.csv")
    results_csv = property(lambda self: self.root / "results.csv")
    overlap_svg = property(lambda self: self.root / "overlap.svg")
    accuracy_svg = property(lambda self: self.root / "accuracy.svg")

    def sibling(self, i: int) -> Path:
        return self.root / "checkpoints" / f"sibling_{i:02d}.ckpt"

    @staticmethod
    def _sdir(s: float) -> str:
        return f"s{s:.4f}"

    def mask(self, s: float, name: str) -> Path:
        return self.root / "masks" / self._sdir(s) / f"{name}.mask"

    def retrained(self, s: float, strategy: str) -> Path:
        return self.root / "retrain" / self._sdir(s) / f"{strategy}.ckpt"


def _load_or_build_ckpt(path: Path, build, expect_parent: Optional[str], manifest: str):
    if path.exists():
        ckpt = read_checkpoint(path)
        if ckpt.manifest_digest != manifest or ckpt.parent_digest != expect_parent:
            raise CorruptionError(f"{path}: lineage does not match this plan")
        return ckpt
    ckpt = build()
    write_checkpoint(path, ckpt)
    return ckpt


def _load_or_build_mask(path: Path, build, expect_parents: list):
    if path.exists():
        mf = read_mask(path)
        if mf.parent_digests != expect_parents:
            raise CorruptionError(f"{path}: parent digests do not match")
        return mf
    mf = build()
    write_mask(path, mf)
    return mf


def _sibling_job(plan_dict: dict, pre_path: str, index: int, out_path: str) -> str:
    plan = ExperimentPlan.from_dict(plan_dict)
    pre = read_checkpoint(pre_path)
    ckpt = make_sibling(plan, pre, index)
    return write_checkpoint(out_path, ckpt)


def _retrain_job(plan_dict: dict, pre_path: str, mask_path: str, out_path: str):
    plan = ExperimentPlan.from_dict(plan_dict)
    pre = read_checkpoint(pre_path)
    mf = read_mask(mask_path)
    start = time.perf_counter()
    ckpt, acc = retrain(plan, pre, mf)
    write_checkpoint(out_path, ckpt)
    return acc, time.perf_counter() - start


class _Pool:
    """Runs jobs inline for ``jobs == 1``; otherwise a process pool."""

    def __init__(self, jobs: int):
        self.jobs = jobs
        self.ex = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None

    def map(self, fn, arg_lists):
        if self.ex is None:
            return [fn(*args) for args in arg_lists]
        futures = [self.ex.submit(fn, *args) for args in arg_lists]
        return [f.result() for f in futures]

    def close(self):
        if self.ex is not None:
            self.ex.shutdown()


def _csv_bytes(columns, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue().encode("utf-8")


def read_results(path) -> list:
    with open(path, newline="") as fh:
        return [ResultRecord.from_row(r) for r in csv.DictReader(fh)]


def _overlap_row(rep: maskops.OverlapReport, t: int) -> list:
    opt = lambda v: "" if v is None else repr(v)
    return [str(rep.k), str(t), repr(rep.per_sibling_sparsity), str(rep.pruned_count),
            repr(rep.overlap_ratio), repr(rep.chance_ratio), opt(rep.mc_estimate),
            opt(rep.mc_stderr)]


def read_overlaps(path) -> list:
    """Rows of an overlap CSV as dicts with numeric fields parsed."""
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.append({"k": int(r["k"]), "t": int(r["t"]),
                        "per_sibling_sparsity": float(r["per_sibling_sparsity"]),
                        "pruned_count": int(r["pruned_count"]),
                        "overlap_ratio": float(r["overlap_ratio"]),
                        "chance_ratio": float(r["chance_ratio"]),
                        "mc_estimate": float(r["mc_estimate"]) if r["mc_estimate"] else None,
                        "mc_stderr": float(r["mc_stderr"]) if r["mc_stderr"] else None})
    return out


@dataclass
class RunResult:
    records: list
    overlaps: list
    out_dir: Path
    masks: dict = field(default_factory=dict)


def run_plan(plan: ExperimentPlan, out_dir=None, jobs: int = 1, figures: bool = True) -> RunResult:
    """Execute (or resume) ``plan`` into ``out_dir``; returns result and overlap rows."""
    out_dir = out_dir if out_dir is not None else plan.output_dir
    if out_dir is None:
        raise UsageError("no output directory given")
    lay = Layout(out_dir)
    manifest = plan.manifest()
    if lay.plan.exists():
        if sha256_hex(lay.plan.read_bytes()) != plan.digest:
            raise UsageError(f"{lay.plan} holds a different plan; use a fresh directory")
    else:
        atomic_write(lay.plan, manifest)
    digest = plan.digest
    plan_dict = plan.to_dict()
    pool = _Pool(jobs)
    try:
        pre = _load_or_build_ckpt(lay.pretrain, lambda: pretrain(plan), None, digest)

        todo = [i for i in range(1, plan.k + 1) if not lay.sibling(i).exists()]
        pool.map(_sibling_job, [(plan_dict, str(lay.pretrain), i, str(lay.sibling(i)))
                                for i in todo])
        sibs = []
        for i in range(1, plan.k + 1):
            ckpt = read_checkpoint(lay.sibling(i))
            if ckpt.manifest_digest != digest or ckpt.parent_digest != pre.digest:
                raise CorruptionError(f"{lay.sibling(i)}: lineage does not match this plan")
            sibs.append(ckpt)

        overlaps, jobs_todo, mask_paths = [], [], {}
        done = {}
        if lay.results_csv.exists():
            done = {r.key: r for r in read_results(lay.results_csv)}
        for s in plan.sparsities:
            sib_masks = [
                _load_or_build_mask(lay.mask(s, f"sibling_{i:02d}"),
                                    lambda c=c: sibling_mask(c, s), [c.digest])
                for i, c in enumerate(sibs, start=1)]
            if plan.k >= 2 and sib_masks[0].mask.pruned_count > 0:
                rep = maskops.overlap_report(
                    [m.mask for m in sib_masks], s, plan.mc_trials,
                    derive_seed(plan.init_seed, f"mc/{s!r}"))
                overlaps.append(rep)
            for strategy in plan.strategies:
                probe = compose(strategy, sib_masks, plan.random_ticket_seed)
                mf = _load_or_build_mask(lay.mask(s, strategy), lambda: probe,
                                         probe.parent_digests)
                mask_paths[(s, strategy)] = mf
                if (s, strategy) not in done:
                    jobs_todo.append((s, strategy))

        order = {key: n for n, key in enumerate(
            (s, st) for s in plan.sparsities for st in plan.strategies)}
        step = max(1, jobs)
        for a in range(0, len(jobs_todo), step):
            chunk = jobs_todo[a:a + step]
            outcomes = pool.map(_retrain_job, [
                (plan_dict, str(lay.pretrain), str(lay.mask(s, st)), str(lay.retrained(s, st)))
                for s, st in chunk])
            for (s, st), (acc, secs) in zip(chunk, outcomes):
                mf = mask_paths[(s, st)]
                done[(s, st)] = ResultRecord(st, plan.k, plan.t, s,
                                             maskops.composed_sparsity(mf.mask), acc,
                                             plan.retrain_seed, round(secs, 3))
            partial = sorted(done.values(), key=lambda r: order[r.key])
            atomic_write(lay.results_csv,
                         _csv_bytes(RESULT_COLUMNS, [r.as_row() for r in partial]))
    finally:
        pool.close()

    records = [done[(s, st)] for s in plan.sparsities for st in plan.strategies]
    for r in records:
        if r.composed_sparsity != mask_paths[r.key].mask.sparsity:
            raise CorruptionError(f"results row {r.key} disagrees with its stored mask")
    atomic_write(lay.results_csv, _csv_bytes(RESULT_COLUMNS, [r.as_row() for r in records]))
    if overlaps:
        atomic_write(lay.overlap_csv,
                     _csv_bytes(OVERLAP_COLUMNS, [_overlap_row(o, plan.t) for o in overlaps]))
    if figures:
        render_figures(lay.root, records, [_overlap_dict(o, plan.t) for o in overlaps])
    return RunResult(records, overlaps, lay.root, mask_paths)


def _overlap_dict(rep: maskops.OverlapReport, t: int) -> dict:
    return {**rep.as_row(), "t": t}


def render_figures(root, records, overlaps):
    from . import report

    root = Path(root)
    if records:
        atomic_write(root / "accuracy.svg",
                     report.render_svg(report.build_accuracy_curves(records),
                                       report.ACCURACY_AXES))
    if overlaps:
        curves = report.build_overlap_curves(overlaps)
        atomic_write(root / "overlap.svg",
                     report.render_svg(curves, report.overlap_axes(curves)))


def run_suite(plans: Sequence[ExperimentPlan], out_dir, jobs: int = 1) -> list:
    """Run several plans under ``out_dir/<plan.name>`` and write combined tables and figures."""
    names = [p.name for p in plans]
    if len(set(names)) != len(names) or any(not n for n in names):
        raise UsageError("plans in a suite need unique, non-empty names")
    root = Path(out_dir)
    results = [run_plan(p, root / p.name, jobs=jobs) for p in plans]
    records = [r for res in results for r in res.records]
    rows = [_overlap_row(o, p.t) for p, res in zip(plans, results) for o in res.overlaps]
    atomic_write(root / "results.csv", _csv_bytes(RESULT_COLUMNS, [r.as_row() for r in records]))
    if rows:
        atomic_write(root / "overlap.csv", _csv_bytes(OVERLAP_COLUMNS, rows))
    render_figures(root, records,
                   [_overlap_dict(o, p.t) for p, res in zip(plans, results) for o in res.overlaps])
    return results


def load_plans(path) -> list:
    """One plan or ``{"plans": [...]}`` from a JSON manifest file."""
    import json

    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from None
    if isinstance(doc, dict) and "plans" in doc:
        return [ExperimentPlan.from_dict(p) for p in doc["plans"]]
    return [ExperimentPlan.from_dict(doc)]
