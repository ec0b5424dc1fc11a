"""Command-line interface.

Subcommands:
    score    write per-filter importance scores as JSON
    prune    score, plan, and rewrite a model; writes archive/manifest/plan
    report   per-layer FLOPs/params table for a model pair, CSV + figure
    verify   run the built-in verification suite on a model
    compare  rank agreement between criteria, CSV + figure

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import synth
from .criteria import CRITERIA, ScoreTable, score_model
from .errors import ConfigError, DomainError, PruneKitError
from .metrics import count_costs, reduction_report, render_csv, render_table
from .model_io import (WeightStore, check_store, load_archive, load_manifest,
                       save_archive, save_manifest, write_json)
from .surgery import PruningPlan, apply, plan_pruning


def _load_model(args) -> tuple:
    graph = load_manifest(args.model)
    if getattr(args, "weights", None):
        store = load_archive(args.weights)
    else:
        # no archive given: deterministic seeded initialization, useful for
        # structural work and self-verification on bare manifests
        if getattr(args, "randomize", False):
            store = synth.randomize_store(graph, args.seed)
        else:
            store = synth.init_store(graph, args.seed)
    check_store(graph, store)
    return graph, store


def _excludes(args) -> tuple[str, ...]:
    out: list[str] = []
    for item in args.exclude or []:
        out.extend(x for x in item.split(",") if x)
    return tuple(out)


def _resolve_ratios(args, table: ScoreTable) -> dict[str, float]:
    ratios = {nid: args.ratio for nid in table.layers}
    if args.ratios_file:
        with open(args.ratios_file, "r", encoding="utf-8") as f:
            try:
                overrides = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.ratios_file}: not valid JSON: {exc}")
        if not isinstance(overrides, dict):
            raise ConfigError(f"{args.ratios_file}: expected an object of node: ratio")
        for nid, r in overrides.items():
            if not isinstance(r, (int, float)):
                raise ConfigError(f"{args.ratios_file}: ratio for {nid!r} is not a number")
            ratios[nid] = float(r)
    return ratios


def cmd_score(args) -> int:
    graph, store = _load_model(args)
    table = score_model(graph, store, args.criterion, _excludes(args),
                        args.exclude_last)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "scores.json")
    write_json(table.to_dict(), out)
    for nid, vec in table.layers.items():
        print(f"{nid}: {len(vec)} filters, min {vec.min():.6g}, max {vec.max():.6g}")
    print(f"wrote {out}")
    return 0


def cmd_prune(args) -> int:
    graph, store = _load_model(args)
    table = score_model(graph, store, args.criterion, _excludes(args),
                        args.exclude_last)
    ratios = _resolve_ratios(args, table)
    plan = plan_pruning(graph, table, ratios)
    pruned_graph, pruned_store = apply(graph, store, plan)
    os.makedirs(args.out_dir, exist_ok=True)
    plan_path = os.path.join(args.out_dir, "plan.json")
    manifest_path = os.path.join(args.out_dir, "pruned.model.json")
    archive_path = os.path.join(args.out_dir, "pruned.pkt")
    write_json(plan.to_dict(), plan_path)
    save_manifest(pruned_graph, manifest_path)
    save_archive(pruned_store, archive_path)
    before = count_costs(graph)
    after = count_costs(pruned_graph)
    rep = reduction_report(before, after)
    removed = sum(len(lp.removed) for lp in plan.layers.values())
    print(f"removed {removed} filters across "
          f"{sum(1 for lp in plan.layers.values() if lp.removed)} layers")
    print(f"FLOPs {before.total_flops} -> {after.total_flops} (-{rep.flops_drop:.2f}%)")
    print(f"params {before.total_params} -> {after.total_params} (-{rep.params_drop:.2f}%)")
    for path in (plan_path, manifest_path, archive_path):
        print(f"wrote {path}")
    return 0


def cmd_report(args) -> int:
    from .figures import render_reduction_figure
    before_graph = load_manifest(args.model)
    after_graph = load_manifest(args.pruned)
    before = count_costs(before_graph)
    after = count_costs(after_graph)
    rep = reduction_report(before, after)
    os.makedirs(args.out_dir, exist_ok=True)
    table_text = render_table(rep)
    sys.stdout.write(table_text)
    csv_path = os.path.join(args.out_dir, "report.csv")
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write(render_csv(rep))
    json_path = os.path.join(args.out_dir, "report.json")
    write_json(rep.to_dict(), json_path)
    fig_path = os.path.join(args.out_dir, "report.png")
    render_reduction_figure(rep, fig_path,
                            title=f"{before_graph.name or args.model} pruning reduction")
    for path in (csv_path, json_path, fig_path):
        print(f"wrote {path}")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suite
    args.randomize = not args.weights
    graph, store = _load_model(args)
    results = run_suite(graph, store, args.seed)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failed += 0 if r.passed else 1
        print(f"{status} {r.name}: {r.detail}")
    print(f"{len(results) - failed}/{len(results)} checks passed (seed {args.seed})")
    return 0 if failed == 0 else 1


def _spearman(a: np.ndarray, b: np.ndarray) -> float:
    from scipy.stats import spearmanr
    if len(a) < 2:
        return 1.0
    rho = spearmanr(a, b).statistic
    if np.isnan(rho):  # constant vector: ranking carries no information
        return 1.0
    return float(rho)


def cmd_compare(args) -> int:
    from .figures import render_compare_figure
    names: list[str] = []
    for item in args.criteria:
        names.extend(x for x in item.split(",") if x)
    if len(names) < 2:
        raise ConfigError("compare needs at least two criteria")
    for name in names:
        if name not in CRITERIA:
            raise ConfigError(f"unknown criterion {name!r}, expected one of {CRITERIA}")
    graph, store = _load_model(args)
    tables = {name: score_model(graph, store, name, _excludes(args),
                                args.exclude_last) for name in names}
    rows: list[dict] = []
    layer_ids = list(tables[names[0]].layers)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            pair = f"{a} vs {b}"
            for nid in layer_ids:
                va = tables[a].layers[nid]
                vb = tables[b].layers[nid]
                k = max(1, int(np.ceil(len(va) * args.overlap_fraction)))
                bottom_a = set(np.argsort(va, kind="stable")[:k].tolist())
                bottom_b = set(np.argsort(vb, kind="stable")[:k].tolist())
                rows.append({
                    "pair": pair, "layer": nid,
                    "spearman": _spearman(va, vb),
                    "bottom_k": k,
                    "bottom_k_overlap": len(bottom_a & bottom_b) / k,
                })
    os.makedirs(args.out_dir, exist_ok=True)
    header = f"{'pair':<24} {'layer':<24} {'spearman':>9} {'overlap':>8}"
    print(header)
    print("-" * len(header))
    for r in rows:
        print(f"{r['pair']:<24} {r['layer']:<24} {r['spearman']:>9.4f} "
              f"{r['bottom_k_overlap']:>8.3f}")
    csv_path = os.path.join(args.out_dir, "compare.csv")
    lines = ["pair,layer,spearman,bottom_k,bottom_k_overlap"]
    for r in rows:
        lines.append(f"{r['pair']},{r['layer']},{r['spearman']:.6f},"
                     f"{r['bottom_k']},{r['bottom_k_overlap']:.6f}")
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    fig_path = os.path.join(args.out_dir, "compare.png")
    render_compare_figure(rows, names, fig_path,
                          title=f"criterion agreement on {graph.name or args.model}")
    write_json(rows, os.path.join(args.out_dir, "compare.json"))
    for path in (csv_path, os.path.join(args.out_dir, "compare.json"), fig_path):
        print(f"wrote {path}")
    return 0


def _add_model_args(p: argparse.ArgumentParser, weights: bool = True) -> None:
    p.add_argument("--model", required=True, help="model manifest (.model.json)")
    if weights:
        p.add_argument("--weights", help="weight archive (.pkt); omitted: seeded init")
    p.add_argument("--seed", type=int, default=0, help="seed for any randomized step")
    p.add_argument("--out-dir", default=".", help="directory for output artifacts")


def _add_scoring_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--criterion", choices=CRITERIA, default="fscl_l1")
    p.add_argument("--exclude", action="append", default=[],
                   help="node id(s) to keep out of pruning; repeatable or comma-separated")
    p.add_argument("--exclude-last", action=argparse.BooleanOptionalAction,
                   default=True,
                   help="keep convs that feed the classifier out of pruning")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prunekit",
        description="Structured filter pruning: similarity scoring, surgery, accounting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="write per-filter importance scores")
    _add_model_args(p)
    _add_scoring_args(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("prune", help="plan and apply structured pruning")
    _add_model_args(p)
    _add_scoring_args(p)
    p.add_argument("--ratio", type=float, default=0.0,
                   help="global pruning fraction in [0,1)")
    p.add_argument("--ratios-file", help="JSON {node id: ratio} overriding --ratio")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("report", help="FLOPs/params reduction table, CSV and figure")
    p.add_argument("--model", required=True, help="reference manifest")
    p.add_argument("--pruned", required=True, help="pruned manifest")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", help="run the built-in verification suite")
    _add_model_args(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compare", help="rank agreement between criteria")
    _add_model_args(p)
    p.add_argument("--criteria", action="append", default=[], required=True,
                   help="two or more criteria, repeatable or comma-separated")
    p.add_argument("--exclude", action="append", default=[])
    p.add_argument("--exclude-last", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--overlap-fraction", type=float, default=0.5,
                   help="fraction of filters counted as the bottom-k set")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PruneKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
