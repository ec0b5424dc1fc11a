"""FLOPs and parameter accounting.

Convention: one multiply-accumulate = one FLOP, counted for conv and fc
nodes only. Batchnorm contributes 2*C parameters and no FLOPs; activations,
pooling, and structural nodes are free.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

from .errors import DomainError
from .graph import ModelGraph


@dataclass
class CostReport:
    flops: dict[str, int] = field(default_factory=dict)
    params: dict[str, int] = field(default_factory=dict)
    total_flops: int = 0
    total_params: int = 0

    def to_dict(self) -> dict:
        return {
            "flops": dict(self.flops),
            "params": dict(self.params),
            "total_flops": self.total_flops,
            "total_params": self.total_params,
        }


def count_costs(graph: ModelGraph, input_shape: tuple[int, int, int] | None = None) -> CostReport:
    """Per-node and total MAC/parameter counts at the given input size."""
    if input_shape is not None and tuple(input_shape) != graph.input_shape:
        g = graph.copy()
        g.input_shape = tuple(int(x) for x in input_shape)
        g.validate()
        graph = g
    report = CostReport()
    for nid in graph.topo:
        n = graph.nodes[nid]
        flops = 0
        params = 0
        if n.kind == "conv":
            _, _, ho, wo = graph.shapes[nid]
            k2 = n.kernel * n.kernel
            params = n.out_channels * n.in_channels * k2
            if n.bias is not None:
                params += n.out_channels
            flops = ho * wo * n.out_channels * n.in_channels * k2
        elif n.kind == "fc":
            params = n.in_features * n.out_features
            if n.bias is not None:
                params += n.out_features
            flops = n.in_features * n.out_features
        elif n.kind == "bn":
            params = 2 * n.channels
        if flops or params:
            report.flops[nid] = flops
            report.params[nid] = params
    report.total_flops = sum(report.flops.values())
    report.total_params = sum(report.params.values())
    return report


@dataclass
class ReductionReport:
    layers: list[tuple[str, int, int, float, int, int, float]] = field(default_factory=list)
    # (node, flops before, flops after, flops drop %, params before, params after, params drop %)
    total_flops_before: int = 0
    total_flops_after: int = 0
    flops_drop: float = 0.0
    total_params_before: int = 0
    total_params_after: int = 0
    params_drop: float = 0.0

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"node": nid, "flops_before": fb, "flops_after": fa, "flops_drop": fd,
                 "params_before": pb, "params_after": pa, "params_drop": pd}
                for nid, fb, fa, fd, pb, pa, pd in self.layers
            ],
            "total": {
                "flops_before": self.total_flops_before,
                "flops_after": self.total_flops_after,
                "flops_drop": self.flops_drop,
                "params_before": self.total_params_before,
                "params_after": self.total_params_after,
                "params_drop": self.params_drop,
            },
        }


def _drop(before: int, after: int) -> float:
    if before == 0:
        return 0.0
    return 100.0 * (1.0 - after / before)


def reduction_report(before: CostReport, after: CostReport) -> ReductionReport:
    """Per-layer and total reduction percentages, 100*(1 - after/before)."""
    if before.total_flops == 0 or before.total_params == 0:
        raise DomainError("reference report has zero totals")
    rep = ReductionReport()
    for nid in before.flops:
        fb = before.flops.get(nid, 0)
        pb = before.params.get(nid, 0)
        fa = after.flops.get(nid, 0)
        pa = after.params.get(nid, 0)
        rep.layers.append((nid, fb, fa, _drop(fb, fa), pb, pa, _drop(pb, pa)))
    rep.total_flops_before = before.total_flops
    rep.total_flops_after = after.total_flops
    rep.flops_drop = _drop(before.total_flops, after.total_flops)
    rep.total_params_before = before.total_params
    rep.total_params_after = after.total_params
    rep.params_drop = _drop(before.total_params, after.total_params)
    return rep


def format_count(x: int) -> str:
    if x >= 1e9:
        return f"{x / 1e9:.2f}B"
    if x >= 1e6:
        return f"{x / 1e6:.2f}M"
    if x >= 1e3:
        return f"{x / 1e3:.2f}K"
    return str(x)


def render_table(rep: ReductionReport) -> str:
    """Fixed-width text table of per-layer and total reductions."""
    out = io.StringIO()
    header = (f"{'layer':<24} {'flops':>12} {'flops*':>12} {'drop%':>7} "
              f"{'params':>12} {'params*':>12} {'drop%':>7}")
    out.write(header + "\n")
    out.write("-" * len(header) + "\n")
    for nid, fb, fa, fd, pb, pa, pd in rep.layers:
        out.write(f"{nid:<24} {format_count(fb):>12} {format_count(fa):>12} "
                  f"{fd:>7.2f} {format_count(pb):>12} {format_count(pa):>12} "
                  f"{pd:>7.2f}\n")
    out.write("-" * len(header) + "\n")
    out.write(f"{'total':<24} {format_count(rep.total_flops_before):>12} "
              f"{format_count(rep.total_flops_after):>12} {rep.flops_drop:>7.2f} "
              f"{format_count(rep.total_params_before):>12} "
              f"{format_count(rep.total_params_after):>12} {rep.params_drop:>7.2f}\n")
    return out.getvalue()


def render_csv(rep: ReductionReport) -> str:
    """Comma-delimited rows: node, flops before/after/drop, params before/after/drop."""
    lines = ["node,flops_before,flops_after,flops_drop_pct,"
             "params_before,params_after,params_drop_pct"]
    for nid, fb, fa, fd, pb, pa, pd in rep.layers:
        lines.append(f"{nid},{fb},{fa},{fd:.4f},{pb},{pa},{pd:.4f}")
    lines.append(f"total,{rep.total_flops_before},{rep.total_flops_after},"
                 f"{rep.flops_drop:.4f},{rep.total_params_before},"
                 f"{rep.total_params_after},{rep.params_drop:.4f}")
    return "\n".join(lines) + "\n"
