"""``maskweave`` command line: each pipeline stage plus the end-to-end sweep.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from . import maskops
from .artifacts import (
    read_checkpoint,
    read_mask,
    write_checkpoint,
    write_mask,
)
from .errors import MaskweaveError, NumericError, UsageError
from .experiment import (
    DEFAULT_GRID,
    OVERLAP_COLUMNS,
    STRATEGIES,
    ExperimentPlan,
    compose,
    desk_plans,
    load_plans,
    make_plan,
    make_sibling,
    pretrain,
    read_overlaps,
    read_results,
    retrain,
    run_plan,
    run_suite,
    sibling_mask,
)

log = logging.getLogger("maskweave")

CKPT_FORMAT = """checkpoint file (.ckpt): b"SIBC", u32 LE version, u32 LE header length,
JSON header (model spec, iteration, seeds, manifest and parent digests, layer table),
d_total float64 LE weights, trailing 32-byte sha256 of everything before it."""
MASK_FORMAT = """mask file (.mask): b"SIBM", u32 LE version, u32 LE header length,
JSON header (layer table, per-sibling sparsity, strategy, parent digests),
ceil(d/8) bytes of keep-bits (1 = kept, LSB first, ascending prunable index),
trailing 32-byte sha256."""
PLAN_FORMAT = """plan file (.json): one ExperimentPlan object (arch, width, dataset,
init_seed, pretrain_iters, sibling_count, noise_specs, sparsities, strategies, train,
retrain_seed, augment_strength, mc_trials, name) or {"plans": [...]}."""
RESULTS_FORMAT = """results CSV: strategy,k,t,per_sibling_sparsity,composed_sparsity,
test_accuracy,retrain_seed,seconds. overlap CSV: """ + ",".join(OVERLAP_COLUMNS) + "."


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _floats(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _names(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _sparsity(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"sparsity {v} outside [0, 1]")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _sub(subs, name, help, formats):
    return subs.add_parser(name, help=help, description=help, epilog=formats,
                           formatter_class=argparse.RawDescriptionHelpFormatter)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="maskweave",
                description="Sibling-network magnitude pruning: overlap and mask composition.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    subs = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    subs.required = True

    s = _sub(subs, "pretrain", "Train shared weights for the plan's t iterations.",
             PLAN_FORMAT + "\n\n" + CKPT_FORMAT)
    s.add_argument("--plan", required=True, help="plan JSON (single plan)")
    s.add_argument("--out", required=True, help="checkpoint to write")

    s = _sub(subs, "sibling", "Train one sibling from the pretrained checkpoint.",
             PLAN_FORMAT + "\n\n" + CKPT_FORMAT)
    s.add_argument("--plan", required=True)
    s.add_argument("--checkpoint", required=True, help="pretrain checkpoint")
    s.add_argument("--index", required=True, type=_positive, help="1-based sibling index")
    s.add_argument("--out", required=True)

    s = _sub(subs, "prune", "One-shot global magnitude pruning of a checkpoint.",
             CKPT_FORMAT + "\n\n" + MASK_FORMAT)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--sparsity", required=True, type=_sparsity)
    s.add_argument("--out", required=True, help="mask to write")

    s = _sub(subs, "overlap", "Overlap ratio of k >= 2 equal-sparsity masks; prints a CSV row.",
             MASK_FORMAT + "\n\n" + RESULTS_FORMAT)
    s.add_argument("--masks", required=True, nargs="+")
    s.add_argument("--t", type=int, default=0, help="branch point recorded in the row")
    s.add_argument("--mc-trials", type=int, default=0, help="Monte-Carlo chance trials")
    s.add_argument("--seed", type=int, default=0)

    s = _sub(subs, "compose", "Combine sibling masks by strategy.", MASK_FORMAT)
    s.add_argument("--strategy", required=True, choices=STRATEGIES)
    s.add_argument("--masks", required=True, nargs="+")
    s.add_argument("--seed", type=int, help="random_ticket shuffle seed")
    s.add_argument("--plan", help="take the random_ticket seed from this plan")
    s.add_argument("--out", required=True)

    s = _sub(subs, "retrain", "Rewind to the pretrain checkpoint, apply a mask, retrain, "
             "evaluate; prints test accuracy.",
             PLAN_FORMAT + "\n\n" + CKPT_FORMAT + "\n\n" + MASK_FORMAT)
    s.add_argument("--plan", required=True)
    s.add_argument("--checkpoint", required=True, help="pretrain checkpoint (rewind point)")
    s.add_argument("--mask", required=True)
    s.add_argument("--out", required=True, help="retrained checkpoint to write")

    s = _sub(subs, "chance", "Chance overlap s^(k-1), optionally with a Monte-Carlo check.", "")
    s.add_argument("--sparsity", required=True, type=float)
    s.add_argument("--k", required=True, type=int)
    s.add_argument("--mc-trials", type=int, default=0)
    s.add_argument("--d", type=_positive, default=10_000, help="mask length for Monte-Carlo")
    s.add_argument("--seed", type=int, default=0)

    s = _sub(subs, "sweep", "Run a plan (or plan suite) end to end, resuming if interrupted.",
             PLAN_FORMAT + "\n\n" + RESULTS_FORMAT + "\n\nOutputs: plan.json, checkpoints/, "
             "masks/, retrain/, results.csv, overlap.csv, accuracy.svg, overlap.svg.\n"
             "--out defaults to $MASKWEAVE_OUT.")
    s.add_argument("--plan", help="plan JSON; omitted -> built from the flags below")
    s.add_argument("--preset", choices=("desk",),
                   help="desk: t in {0,500,2000} scaled to T for k=2, plus k=4,10")
    s.add_argument("--out", default=os.environ.get("MASKWEAVE_OUT"))
    s.add_argument("--jobs", type=_positive, default=1, help="worker processes")
    s.add_argument("--write-plan", metavar="FILE", help="write the resolved plan and exit")
    s.add_argument("--arch", default="mlp", choices=("mlp", "microconv", "microresnet"))
    s.add_argument("--width", type=_positive, default=32)
    s.add_argument("--dataset", default="spirals", choices=("spirals", "blobs", "bars"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--k", type=_positive, default=2)
    s.add_argument("--pretrain-iters", type=int)
    s.add_argument("--total-iters", type=int)
    s.add_argument("--sparsities", type=_floats)
    s.add_argument("--strategies", type=_names)
    s.add_argument("--augment", type=float, default=0.02, help="augmentation strength")
    s.add_argument("--mc-trials", type=int)

    s = _sub(subs, "report", "Render overlap or accuracy curves to SVG.", RESULTS_FORMAT)
    kind = s.add_mutually_exclusive_group(required=True)
    kind.add_argument("--overlap", nargs="+", metavar="CSV")
    kind.add_argument("--accuracy", nargs="+", metavar="CSV")
    s.add_argument("--out", required=True)
    return p


def _one_plan(path) -> ExperimentPlan:
    plans = load_plans(path)
    if len(plans) != 1:
        raise UsageError(f"{path} holds {len(plans)} plans; stage commands take one")
    return plans[0]


_DATASETS = {
    "spirals": {"name": "spirals", "n_per_class": 500, "noise_sd": 0.05, "seed": 0},
    "blobs": {"name": "blobs", "n_per_class": 250, "noise_sd": 0.3, "seed": 0},
    "bars": {"name": "bars", "n_per_class": 100, "noise_sd": 0.3, "seed": 0},
}


def _override(plan: ExperimentPlan, a) -> ExperimentPlan:
    changes = {}
    if a.pretrain_iters is not None:
        changes["pretrain_iters"] = a.pretrain_iters
    if a.total_iters is not None:
        changes["train"] = dataclasses.replace(plan.train, total_iters=a.total_iters)
    if a.sparsities is not None:
        changes["sparsities"] = a.sparsities
    if a.strategies is not None:
        changes["strategies"] = a.strategies
    if a.mc_trials is not None:
        changes["mc_trials"] = a.mc_trials
    return dataclasses.replace(plan, **changes) if changes else plan


def _sweep_plans(a) -> list:
    if a.plan and a.preset:
        raise UsageError("--plan and --preset are mutually exclusive")
    if a.plan:
        return [_override(p, a) for p in load_plans(a.plan)]
    total = a.total_iters if a.total_iters is not None else 4000
    common = dict(arch=a.arch, width=a.width, dataset=_DATASETS[a.dataset],
                  sparsities=a.sparsities or DEFAULT_GRID, strategies=a.strategies or STRATEGIES,
                  augment_strength=a.augment,
                  mc_trials=10_000 if a.mc_trials is None else a.mc_trials)
    if a.preset == "desk":
        return desk_plans(total_iters=total, seed=a.seed, **common)
    return [make_plan(seed=a.seed, k=a.k, pretrain_iters=a.pretrain_iters or 0,
                      total_iters=total, **common)]


def _print(text):
    sys.stdout.write(f"{text}\n")


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def cmd_pretrain(a):
    plan = _one_plan(a.plan)
    write_checkpoint(a.out, pretrain(plan))


def cmd_sibling(a):
    plan = _one_plan(a.plan)
    write_checkpoint(a.out, make_sibling(plan, read_checkpoint(a.checkpoint), a.index))


def cmd_prune(a):
    write_mask(a.out, sibling_mask(read_checkpoint(a.checkpoint), a.sparsity))


def cmd_overlap(a):
    if len(a.masks) < 2:
        raise UsageError("overlap needs at least two masks")
    files = [read_mask(m) for m in a.masks]
    s_values = {f.per_sibling_sparsity for f in files}
    if len(s_values) != 1:
        raise UsageError("masks were pruned at different sparsities")
    s = s_values.pop()
    rep = maskops.overlap_report([f.mask for f in files], s, a.mc_trials, a.seed)
    row = [rep.k, a.t, repr(rep.per_sibling_sparsity), rep.pruned_count, repr(rep.overlap_ratio),
           repr(rep.chance_ratio), "" if rep.mc_estimate is None else repr(rep.mc_estimate),
           "" if rep.mc_stderr is None else repr(rep.mc_stderr)]
    _print(",".join(OVERLAP_COLUMNS))
    _print(",".join(str(x) for x in row))


def cmd_compose(a):
    seed = a.seed
    if a.strategy == "random_ticket" and seed is None:
        if not a.plan:
            raise UsageError("random_ticket needs --seed or --plan")
        seed = _one_plan(a.plan).random_ticket_seed
    files = [read_mask(m) for m in a.masks]
    write_mask(a.out, compose(a.strategy, files, seed))


def cmd_retrain(a):
    plan = _one_plan(a.plan)
    ckpt, acc = retrain(plan, read_checkpoint(a.checkpoint), read_mask(a.mask))
    write_checkpoint(a.out, ckpt)
    _print(repr(acc))


def cmd_chance(a):
    value = maskops.chance_overlap(a.sparsity, a.k)
    if a.mc_trials:
        est, se = maskops.mc_chance_overlap(a.d, a.sparsity, a.k, a.mc_trials, a.seed)
        _print(f"{_fmt(value)} mc={_fmt(est)} stderr={_fmt(se)}")
    else:
        _print(_fmt(value))


def cmd_sweep(a):
    plans = _sweep_plans(a)
    if a.write_plan:
        import json

        doc = plans[0].to_dict() if len(plans) == 1 else {"plans": [p.to_dict() for p in plans]}
        Path(a.write_plan).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return
    if not a.out:
        raise UsageError("sweep needs --out (or MASKWEAVE_OUT)")
    if len(plans) == 1:
        res = run_plan(plans[0], a.out, jobs=a.jobs)
        log.info("%d result rows in %s", len(res.records), res.out_dir)
    else:
        run_suite(plans, a.out, jobs=a.jobs)


def cmd_report(a):
    from . import report

    if a.overlap:
        rows = [r for path in a.overlap for r in read_overlaps(path)]
        series = report.build_overlap_curves(rows)
        axes = report.overlap_axes(series)
    else:
        rows = [r for path in a.accuracy for r in read_results(path)]
        series = report.build_accuracy_curves(rows)
        axes = report.ACCURACY_AXES
    report.emit_svg(series, axes, a.out)


COMMANDS = {"pretrain": cmd_pretrain, "sibling": cmd_sibling, "prune": cmd_prune,
            "overlap": cmd_overlap, "compose": cmd_compose, "retrain": cmd_retrain,
            "chance": cmd_chance, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except MaskweaveError as exc:
        sys.stderr.write(f"maskweave: {exc}\n")
        return exc.exit_code
    except (FloatingPointError, OverflowError) as exc:
        sys.stderr.write(f"maskweave: numeric failure: {exc}\n")
        return NumericError.exit_code
    except OSError as exc:
        sys.stderr.write(f"maskweave: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
