"""Command-line front end.

Commands wrap the library modules and emit plot-ready CSV / JSON artifacts.
Exit codes: 0 success, 1 runtime failure, 2 usage or contract error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .accounting import (
    ArchDescriptor,
    count_stats,
    layer_stats,
    load_builtin_arch,
    load_builtin_schedule,
    parse_schedule,
    reduction_report,
)
from .ci import BRUTE_FORCE_MAX_ROWS, brute_force_min_subset, ci_all, ci_combined_exact, rank_change, RowMask
from .errors import (
    ChipError,
    CombinatorialGuardError,
    ManifestError,
    MaskError,
    ScheduleError,
)
from .scoring import (
    read_score_json,
    score_model,
    select_mask,
    stability_analysis,
    write_mask_json,
    write_score_json,
)
from .tensor_io import DumpManifest, load_sample, matricize

log = logging.getLogger("chip")

DEFAULT_SEED = 1001

# Fixed seeds for the demo's base network and task so that default invocations
# are comparable run to run; per-cell randomness comes from --seeds.
DEMO_TASK_SEED = 7
DEMO_NET_SEED = 11
DEMO_TRAIN_SEED = 3

CONTRACT_ERRORS = (ManifestError, ScheduleError, MaskError, CombinatorialGuardError)


def _provenance(args) -> str:
    line = f"# chip-toolkit {__version__} seed={args.seed}"
    if not args.no_timestamp:
        line += f" generated={datetime.now(timezone.utc).isoformat(timespec='seconds')}"
    return line


def _write_csv(path: Path, provenance: str, lines: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join([provenance, *lines]) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = args.out_dir or os.environ.get("CHIP_OUT_DIR") or "."
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _safe_name(layer_id: str) -> str:
    return layer_id.replace("/", "_").replace("\\", "_")


def _load_manifest(path: str) -> tuple[DumpManifest, Path]:
    manifest = DumpManifest.load(path)
    return manifest, Path(path).parent


def _resolve_arch(spec: str) -> ArchDescriptor:
    if Path(spec).exists():
        return ArchDescriptor.load(spec)
    return load_builtin_arch(spec)


def _resolve_schedule(spec: str, arch: ArchDescriptor):
    if Path(spec).exists():
        return parse_schedule(spec, arch)
    sched = load_builtin_schedule(spec)
    sched.kappas(arch)
    return sched


def cmd_score(args) -> int:
    manifest, root = _load_manifest(args.manifest)
    out = _out_dir(args)
    samples = args.samples if args.samples is not None else manifest.num_samples
    scores = score_model(manifest, samples, args.batch_size, root=root,
                         seed=args.seed, threads=args.threads)
    for layer_id, vec in scores.per_layer.items():
        path = out / f"{_safe_name(layer_id)}.scores.json"
        write_score_json(vec, path, seed=args.seed)
        log.info("wrote %s", path)
    print(f"scored {len(scores.per_layer)} layers over {samples} samples -> {out}")
    return 0


def cmd_prune(args) -> int:
    arch = _resolve_arch(args.arch)
    schedule = _resolve_schedule(args.schedule, arch)
    kappas = schedule.kappas(arch)
    out = _out_dir(args)
    scores_dir = Path(args.scores_dir)
    for conv, kappa in zip(arch.prunable_convs(), kappas):
        score_path = scores_dir / f"{_safe_name(conv.layer_id)}.scores.json"
        if not score_path.exists():
            raise ManifestError(f"no score file for layer {conv.layer_id!r} at {score_path}")
        vec = read_score_json(score_path)
        if len(vec) != conv.out_channels:
            raise ScheduleError(
                f"{conv.layer_id}: score vector has {len(vec)} channels, "
                f"architecture has {conv.out_channels}"
            )
        mask = select_mask(vec, kappa)
        write_mask_json(mask, out / f"{_safe_name(conv.layer_id)}.mask.json")
    base = count_stats(arch)
    pruned = count_stats(arch, schedule)
    red_p, red_f = reduction_report(base, pruned)
    rows = ["layer_id,params_base,params_pruned,flops_base,flops_pruned"]
    for ls in layer_stats(arch, schedule):
        rows.append(f"{ls.layer_id},{ls.params_base},{ls.params_pruned},"
                    f"{ls.flops_base},{ls.flops_pruned}")
    rows.append(f"TOTAL,{base.params},{pruned.params},{base.flops},{pruned.flops}")
    prov = (_provenance(args)
            + f"\n# params_reduction_pct={red_p:.2f} flops_reduction_pct={red_f:.2f}")
    _write_csv(out / "stats.csv", prov, rows)
    print(f"masks for {len(kappas)} layers -> {out}; params -{red_p:.1f}% flops -{red_f:.1f}%")
    return 0


def cmd_oracle(args) -> int:
    manifest, root = _load_manifest(args.manifest)
    entry = manifest.layer(args.layer)
    if entry.c > args.max_rows:
        raise CombinatorialGuardError(
            f"layer {args.layer!r} has {entry.c} channels, over the --max-rows "
            f"guard of {args.max_rows} (library bound {BRUTE_FORCE_MAX_ROWS})"
        )
    m = args.prune_count
    rows = ["sample_id,prune_count,greedy_subset,oracle_subset,"
            "greedy_exact_ci,oracle_ci,gap,agree"]
    agree_count = 0
    for sid in range(manifest.num_samples):
        mat = matricize(load_sample(root, manifest, args.layer, sid))
        if m == 0:
            rows.append(f"{sid},0,,,0,0,0,1")
            agree_count += 1
            continue
        scores = ci_all(mat)
        order = sorted(range(mat.rows), key=lambda i: (scores[i].value, i))
        greedy = sorted(order[:m])
        greedy_ci = ci_combined_exact(mat, RowMask.of(mat.rows, greedy))
        oracle_subset, oracle_ci = brute_force_min_subset(mat, m)
        gap = greedy_ci - oracle_ci
        agree = int(set(greedy) == oracle_subset)
        agree_count += agree
        rows.append(
            f"{sid},{m},{'+'.join(map(str, greedy))},"
            f"{'+'.join(map(str, sorted(oracle_subset)))},"
            f"{greedy_ci:.12g},{oracle_ci:.12g},{gap:.12g},{agree}"
        )
    out = _out_dir(args)
    path = out / f"{_safe_name(args.layer)}.oracle.csv"
    _write_csv(path, _provenance(args), rows)
    print(f"{manifest.num_samples} samples, greedy agreed on "
          f"{agree_count}/{manifest.num_samples} -> {path}")
    return 0


def cmd_stability(args) -> int:
    manifest, root = _load_manifest(args.manifest)
    total = args.batches * args.batch_size
    scores = score_model(manifest, total, args.batch_size, root=root,
                         seed=args.seed, threads=args.threads)
    out = _out_dir(args)
    layer_ids = [args.layer] if args.layer else manifest.layer_ids()
    for layer_id in layer_ids:
        batches = scores.per_batch[layer_id]
        pm = stability_analysis(batches)
        n = len(batches)
        prov = _provenance(args)
        rows = ["batch," + ",".join(f"batch_{j}" for j in range(n))]
        for i in range(n):
            vals = ",".join(f"{pm.matrix[i, j]:.12g}" for j in range(n))
            rows.append(f"batch_{i},{vals}")
        _write_csv(out / f"{_safe_name(layer_id)}.pearson.csv", prov, rows)
        c = len(batches[0])
        heat = ["batch," + ",".join(f"ch_{j}" for j in range(c))]
        for i, vec in enumerate(batches):
            heat.append(f"{i}," + ",".join(f"{v:.12g}" for v in vec.values))
        _write_csv(out / f"{_safe_name(layer_id)}.batch_ci.csv", prov, heat)
        off = pm.off_diagonal()
        print(f"{layer_id}: {n}x{n} Pearson, off-diag min {off.min():.3f} "
              f"mean {off.mean():.3f}")
    return 0


def cmd_metric_compare(args) -> int:
    manifest, root = _load_manifest(args.manifest)
    mat = matricize(load_sample(root, manifest, args.layer, args.sample))
    scores = ci_all(mat)
    rows = ["channel,rank_change,ci_change"]
    for ch in range(mat.rows):
        rc = rank_change(mat, ch)
        rows.append(f"{ch},{rc},{scores[ch].value:.12g}")
    out = _out_dir(args)
    path = out / f"{_safe_name(args.layer)}.metric_compare.csv"
    _write_csv(path, _provenance(args), rows)
    distinct_ci = len({f"{s.value:.12g}" for s in scores})
    distinct_rc = len({rank_change(mat, ch) for ch in range(mat.rows)})
    print(f"{mat.rows} channels: {distinct_ci} distinct CI values vs "
          f"{distinct_rc} distinct rank changes -> {path}")
    return 0


def cmd_demo(args) -> int:
    from .desknet import accuracy, capture_activations, prune_compare, reference_net, reference_task, train

    criteria = tuple(c.strip() for c in args.criteria.split(",") if c.strip())
    unknown = [c for c in criteria if c not in ("chip", "random", "l1norm")]
    if unknown:
        raise MaskError(f"unknown criteria {unknown}; supported: chip, random, l1norm")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not 0.0 <= args.ratio < 1.0:
        raise MaskError(f"--ratio must be in [0, 1), got {args.ratio}")

    out = _out_dir(args)
    task = reference_task(seed=DEMO_TASK_SEED)
    data = task.generate()
    net = reference_net(seed=DEMO_NET_SEED)
    log.info("training base net for %d epochs", args.epochs)
    result = train(net, task, args.epochs, lr=0.01, momentum=0.9,
                   weight_decay=args.weight_decay, seed=DEMO_TRAIN_SEED, data=data)
    base_acc = accuracy(result.net, data[2], data[3])
    dump_dir = out / "dumps"
    capture_activations(result.net, task, 640, dump_dir, data=data)
    report = prune_compare(task, result.net, args.ratio, criteria, seeds,
                           finetune_epochs=args.finetune_epochs,
                           weight_decay=args.weight_decay, work_dir=None)
    prov = _provenance(args) + f"\n# baseline_acc={base_acc:.6f}"
    _write_csv(out / "comparison.csv", prov, report.to_csv_rows())
    print(f"baseline acc {base_acc:.3f}; dumps -> {dump_dir}")
    for crit in criteria:
        print(f"  {crit}: mean pre {report.mean_acc(crit, 'acc_pre'):.3f} "
              f"mean post {report.mean_acc(crit, 'acc_post'):.3f}")
    print(f"comparison -> {out / 'comparison.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chip",
        description="Channel-independence scoring and filter-pruning toolkit.",
    )
    parser.add_argument("--version", action="version", version=f"chip-toolkit {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help=f"global RNG seed (default {DEFAULT_SEED})")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads for per-layer loops (1 = fully ordered)")
    common.add_argument("--out-dir", default=None,
                        help="output directory (fallback: $CHIP_OUT_DIR, then .)")
    common.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
    common.add_argument("--no-timestamp", action="store_true",
                        help="omit timestamps from output provenance comments")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", parents=[common],
                       help="score every layer of an activation dump")
    p.add_argument("--manifest", required=True)
    p.add_argument("--samples", type=int, default=None,
                   help="samples to draw (default: all in manifest)")
    p.add_argument("--batch-size", type=int, default=128)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("prune", parents=[common],
                       help="emit prune masks and a params/FLOPs stats CSV")
    p.add_argument("--scores-dir", required=True)
    p.add_argument("--schedule", required=True,
                   help="schedule JSON path or builtin name (e.g. resnet56_42.8_kappa)")
    p.add_argument("--arch", required=True,
                   help="architecture JSON path or builtin name (e.g. resnet56)")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("oracle", parents=[common],
                       help="compare greedy channel selection against brute force")
    p.add_argument("--manifest", required=True)
    p.add_argument("--layer", required=True)
    p.add_argument("--prune-count", type=int, required=True)
    p.add_argument("--max-rows", type=int, default=BRUTE_FORCE_MAX_ROWS,
                   help="refuse layers wider than this")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("stability", parents=[common],
                       help="per-batch mean CI vectors and their Pearson matrix")
    p.add_argument("--manifest", required=True)
    p.add_argument("--batches", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--layer", default=None, help="restrict to one layer")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("metric-compare", parents=[common],
                       help="per-channel rank change vs nuclear-norm change")
    p.add_argument("--manifest", required=True)
    p.add_argument("--layer", required=True)
    p.add_argument("--sample", type=int, default=0)
    p.set_defaults(func=cmd_metric_compare)

    p = sub.add_parser("demo", parents=[common],
                       help="train the desk net, prune by each criterion, fine-tune, report")
    p.add_argument("--ratio", type=float, default=0.5)
    p.add_argument("--criteria", default="chip,random,l1norm")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--epochs", type=int, default=30,
                   help="base training epochs (fixed internal seed)")
    p.add_argument("--finetune-epochs", type=int, default=4)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CONTRACT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ChipError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
