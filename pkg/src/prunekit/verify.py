"""Built-in verification suite for a loaded model.

Each check re-derives an expected result through an independent route (naive
loops, round-trips, re-execution) and compares against the production path.
The CLI `verify` command prints one line per check.
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import criteria, surgery, synth
from .engine import compare_outputs, forward
from .graph import ModelGraph, prunable_layers
from .model_io import WeightStore, load_archive, save_archive
from .tensors import DTYPE, pad_center, p_norm, replicate_slice, xcorr_valid


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def naive_fscl(graph: ModelGraph, store: WeightStore, producer: str,
               p: int) -> np.ndarray:
    """Direct per-index transcription of the consumer-similarity score.

    Loops over every filter, consumer entry, and map position; exists only
    to cross-check the vectorized path.
    """
    from .graph import resolve_consumers
    node = graph.nodes[producer]
    w = store[node.weight]
    out = np.zeros(w.shape[0], dtype=np.float64)
    for j0 in range(w.shape[0]):
        slices = resolve_consumers(graph, store, producer, j0)
        acc = 0.0
        for entry in slices.entries:
            rep = replicate_slice(entry.slice, w.shape[1])
            prod = w[j0]
            if rep.shape[1] > prod.shape[1] or rep.shape[2] > prod.shape[2]:
                prod = pad_center(prod, (max(rep.shape[1], prod.shape[1]),
                                         max(rep.shape[2], prod.shape[2])))
            acc += p_norm(xcorr_valid(prod, rep), p)
        out[j0] = acc / len(slices.entries)
    return out


def naive_fpgm(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64).reshape(weights.shape[0], -1)
    out = np.zeros(w.shape[0])
    for j in range(w.shape[0]):
        for k in range(w.shape[0]):
            out[j] += float(np.sqrt(((w[j] - w[k]) ** 2).sum()))
    return out


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(np.abs(b), 1e-12)
    return float(np.max(np.abs(a - b) / denom))


def check_manifest(graph: ModelGraph, store: WeightStore) -> CheckResult:
    from .model_io import check_store
    try:
        graph.validate()
        check_store(graph, store)
    except Exception as exc:
        return CheckResult("manifest", False, str(exc))
    return CheckResult("manifest", True,
                       f"{len(graph.nodes)} nodes, {len(store)} tensors")


def check_forward(graph: ModelGraph, store: WeightStore, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2,) + graph.input_shape).astype(DTYPE)
    try:
        out1 = forward(graph, store, x)
        out2 = forward(graph, store, x)
    except Exception as exc:
        return CheckResult("forward", False, str(exc))
    if not np.array_equal(out1, out2):
        return CheckResult("forward", False, "repeat evaluation differs")
    return CheckResult("forward", True, f"output shape {tuple(out1.shape)}, deterministic")


def check_score_oracle(seed: int, cases: int = 10) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        graph, store = synth.random_plain_cnn(rng, depth=int(rng.integers(2, 4)),
                                              max_channels=6, input_size=8)
        for p in (1, 2):
            for nid in prunable_layers(graph):
                fast = criteria.fscl_score(graph, store, nid, p)
                slow = naive_fscl(graph, store, nid, p)
                worst = max(worst, _rel_err(fast, slow))
        w = rng.standard_normal((int(rng.integers(2, 7)), 3, 3, 3))
        worst = max(worst, _rel_err(criteria.fpgm_score(w), naive_fpgm(w)))
    ok = worst < 1e-5
    return CheckResult("score-oracle", ok, f"max relative error {worst:.2e} over {cases} graphs")


def _zero_unit(graph: ModelGraph, store: WeightStore) -> tuple[str, ...] | None:
    """First prunable unit (coupled group or single conv) to zero out."""
    layers = prunable_layers(graph)
    if not layers:
        return None
    for group in graph.coupled_groups():
        if group.members[0] in layers:
            return group.members
    return (layers[0],)


def check_zero_filter(graph: ModelGraph, store: WeightStore, seed: int) -> CheckResult:
    unit = _zero_unit(graph, store)
    if unit is None:
        return CheckResult("zero-filter", True, "no prunable layers; skipped")
    rng = np.random.default_rng(seed)
    s = {k: v.copy() for k, v in store.items()}
    j0 = int(rng.integers(0, graph.nodes[unit[0]].out_channels))
    for m in unit:
        node = graph.nodes[m]
        s[node.weight][j0] = 0.0
        if node.bias is not None:
            s[node.bias][j0] = 0.0
        for use in graph.channel_uses(m):
            if use.kind == "bn":
                bn = graph.nodes[use.node]
                s[bn.gamma][use.offset + j0] = 0.0
                s[bn.beta][use.offset + j0] = 0.0
    plan = surgery.PruningPlan()
    for m in unit:
        plan.layers[m] = surgery.LayerPlan(m, 0.0, graph.nodes[m].out_channels - 1, [j0])
    x = rng.standard_normal((4,) + graph.input_shape).astype(DTYPE)
    before = forward(graph, s, x)
    g2, s2 = surgery.apply(graph, s, plan)
    after = forward(g2, s2, x)
    diff, ok = compare_outputs(before, after, 1e-6)
    return CheckResult("zero-filter", ok,
                       f"filter {j0} of {'+'.join(unit)} removed, max diff {diff:.2e}")


def check_archive_roundtrip(store: WeightStore) -> CheckResult:
    fd, path = tempfile.mkstemp(suffix=".pkt")
    os.close(fd)
    try:
        save_archive(store, path)
        back = load_archive(path)
    finally:
        os.unlink(path)
    if set(back) != set(store):
        return CheckResult("archive", False, "name sets differ after round-trip")
    for name in store:
        if not np.array_equal(store[name].astype(DTYPE), back[name]):
            return CheckResult("archive", False, f"tensor {name!r} altered by round-trip")
    return CheckResult("archive", True, f"{len(store)} tensors round-trip bit-identical")


def check_surgery(graph: ModelGraph, store: WeightStore, seed: int) -> CheckResult:
    from .metrics import count_costs
    layers = prunable_layers(graph)
    if not layers:
        return CheckResult("surgery", True, "no prunable layers; skipped")
    table = criteria.score_model(graph, store, "l1")
    plan = surgery.plan_pruning(graph, table, {nid: 0.3 for nid in table.layers})
    try:
        g2, s2 = surgery.apply(graph, store, plan)
        g2.validate()
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2,) + graph.input_shape).astype(DTYPE)
        forward(g2, s2, x)
    except Exception as exc:
        return CheckResult("surgery", False, f"0.3-ratio plan failed: {exc}")
    before = count_costs(graph)
    after = count_costs(g2)
    if after.total_params >= before.total_params:
        return CheckResult("surgery", False, "parameter count did not decrease")
    return CheckResult("surgery", True,
                       f"0.3-ratio plan: params {before.total_params} -> {after.total_params}")


def run_suite(graph: ModelGraph, store: WeightStore, seed: int) -> list[CheckResult]:
    results = [check_manifest(graph, store)]
    if not results[0].passed:
        return results
    results.append(check_forward(graph, store, seed))
    results.append(check_score_oracle(seed))
    results.append(check_zero_filter(graph, store, seed))
    results.append(check_archive_roundtrip(store))
    results.append(check_surgery(graph, store, seed))
    return results
