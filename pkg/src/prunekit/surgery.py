"""Pruning plans and structural rewriting of graph + weights.

plan_pruning turns a score table and per-layer ratios into concrete removal
sets (keep count N0 = max(1, ceil((1 - ratio) * N)), smallest scores out,
ties resolved toward the lower filter index). apply rewrites a private copy
of the model: producer rows go, and every downstream consumer loses the
matching input channels, with concat offsets recomputed as earlier layers
shrink.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .criteria import ScoreTable
from .errors import ConfigError, StructuralError
from .graph import ChannelUse, ModelGraph
from .model_io import WeightStore


@dataclass
class LayerPlan:
    node: str
    ratio: float
    keep: int
    removed: list[int]  # ascending filter indices


@dataclass
class PruningPlan:
    layers: dict[str, LayerPlan] = field(default_factory=dict)
    groups: list[tuple[str, ...]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {nid: {"ratio": lp.ratio, "removed": list(lp.removed)}
                for nid, lp in self.layers.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PruningPlan":
        plan = cls()
        for nid, entry in d.items():
            removed = sorted(int(i) for i in entry["removed"])
            keep_hint = entry.get("keep")
            plan.layers[nid] = LayerPlan(nid, float(entry["ratio"]),
                                         keep_hint if keep_hint is not None else -1,
                                         removed)
        return plan


def select_removals(scores: np.ndarray, ratio: float) -> list[int]:
    """Indices of the (N - N0) smallest scores; ties drop the lower index."""
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"ratio must be in [0, 1), got {ratio}")
    n = len(scores)
    keep = max(1, math.ceil((1.0 - ratio) * n))
    k = n - keep
    if k <= 0:
        return []
    order = np.argsort(np.asarray(scores, dtype=np.float64), kind="stable")
    return sorted(int(i) for i in order[:k])


def plan_pruning(graph: ModelGraph, scores: ScoreTable,
                 ratios: dict[str, float]) -> PruningPlan:
    """Build removal sets for every scored node with a nonzero ratio.

    ``ratios`` maps node id to fraction; nodes absent from the map keep all
    filters. Coupled members share one removal set computed from their
    (already combined) score vector, so their ratios must agree.
    """
    for nid, r in ratios.items():
        if nid not in scores.layers:
            raise ConfigError(f"ratio given for {nid!r}, which has no scores "
                              f"(not prunable or excluded)")
        if not 0.0 <= r < 1.0:
            raise ConfigError(f"node {nid!r}: ratio must be in [0, 1), got {r}")
    plan = PruningPlan()
    handled: set[str] = set()
    for group in graph.coupled_groups():
        members = [m for m in group.members if m in scores.layers]
        if not members:
            continue
        rset = {ratios.get(m, 0.0) for m in members}
        if len(rset) > 1:
            raise ConfigError(
                f"coupled group {tuple(members)} has conflicting ratios {sorted(rset)}; "
                f"members prune together")
        ratio = rset.pop()
        removed = select_removals(scores.layers[members[0]], ratio)
        n = len(scores.layers[members[0]])
        for m in members:
            plan.layers[m] = LayerPlan(m, ratio, n - len(removed), list(removed))
            handled.add(m)
        plan.groups.append(tuple(members))
    for nid, vec in scores.layers.items():
        if nid in handled:
            continue
        ratio = ratios.get(nid, 0.0)
        removed = select_removals(vec, ratio)
        plan.layers[nid] = LayerPlan(nid, ratio, len(vec) - len(removed), removed)
    return plan


def _prune_units(graph: ModelGraph, plan: PruningPlan) -> list[tuple[str, ...]]:
    """Plan nodes grouped into joint-removal units, in topological order.

    Units come from the graph's own coupling structure rather than the plan,
    so a plan replayed from JSON (which stores no group annotations) still
    prunes coupled members jointly.
    """
    grouped: set[str] = set()
    units: list[tuple[str, ...]] = []
    for group in graph.coupled_groups():
        members = tuple(m for m in group.members if m in plan.layers)
        if members:
            units.append(members)
            grouped.update(members)
    for nid in plan.layers:
        if nid not in grouped:
            units.append((nid,))
    order = {nid: i for i, nid in enumerate(graph.topo)}
    units.sort(key=lambda unit: min(order[m] for m in unit))
    return units


def apply(graph: ModelGraph, store: WeightStore,
          plan: PruningPlan) -> tuple[ModelGraph, WeightStore]:
    """Execute a plan on copies of the graph and store.

    Units run in topological order and the graph re-validates after each, so
    concat offsets seen by later units reflect channels already removed.
    Within a unit, consumer edits dedupe on (node, offset): coupled members
    reach shared consumers through the same add, and those channels must be
    deleted once.
    """
    g = graph.copy()
    s = {name: t.copy() for name, t in store.items()}
    for nid, lp in plan.layers.items():
        node = g.nodes.get(nid)
        if node is None or node.kind != "conv":
            raise StructuralError(f"plan names {nid!r}, which is not a conv in this graph")
        if lp.removed and (lp.removed[-1] >= node.out_channels or lp.removed[0] < 0):
            raise StructuralError(
                f"plan for {nid!r} removes filter {lp.removed[-1]} but the layer "
                f"has {node.out_channels}")
        if len(lp.removed) >= node.out_channels:
            raise StructuralError(f"plan for {nid!r} removes every filter")

    for unit in _prune_units(g, plan):
        removed = plan.layers[unit[0]].removed
        if not removed:
            continue
        if any(plan.layers[m].removed != removed for m in unit):
            raise StructuralError(
                f"coupled unit {unit} has diverging removal sets")
        uses: list[ChannelUse] = []
        seen: set[ChannelUse] = set()
        for m in unit:
            for u in g.channel_uses(m):
                if u not in seen:
                    seen.add(u)
                    uses.append(u)
        rm = np.asarray(removed, dtype=np.int64)
        for m in unit:
            node = g.nodes[m]
            s[node.weight] = np.delete(s[node.weight], rm, axis=0)
            if node.bias is not None:
                s[node.bias] = np.delete(s[node.bias], rm, axis=0)
            node.out_channels -= len(removed)
        # group consumer edits per node: a consumer reached at several
        # offsets (e.g. concat of two members) loses all channels at once
        per_node: dict[str, list[ChannelUse]] = {}
        for u in uses:
            per_node.setdefault(u.node, []).append(u)
        for cid, cuses in per_node.items():
            cnode = g.nodes[cid]
            kind = cuses[0].kind
            if kind == "conv":
                chans = sorted({u.offset + r for u in cuses for r in removed})
                s[cnode.weight] = np.delete(s[cnode.weight], chans, axis=1)
                cnode.in_channels -= len(chans)
            elif kind == "fc":
                cols = sorted({(u.offset + r) * u.spatial + t
                               for u in cuses for r in removed
                               for t in range(u.spatial)})
                s[cnode.weight] = np.delete(s[cnode.weight], cols, axis=1)
                cnode.in_features -= len(cols)
            elif kind == "bn":
                chans = sorted({u.offset + r for u in cuses for r in removed})
                for ref in (cnode.gamma, cnode.beta, cnode.mean, cnode.var):
                    s[ref] = np.delete(s[ref], chans, axis=0)
                cnode.channels -= len(chans)
            elif kind == "pad":
                raise StructuralError(
                    f"pruned channels of {unit} flow into pad node {cid!r}; "
                    f"parameter-free shortcuts cannot be re-indexed")
        g.validate()
    return g, s
