"""Filter-importance criteria.

fscl_l1 / fscl_l2 score a producer filter by how strongly its weights
cross-correlate with the channel slices that consume its output downstream:
for filter j0, every consumer slice is replicated across the producer's
input channels, correlated against the filter in valid mode, and the p-norm
of the resulting map is averaged over all pooled consumer slices.

l1 / l2 are per-filter weight norms; fpgm is the sum of pairwise Euclidean
distances to every other filter in the same layer.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, DomainError, ScoringError
from .graph import ModelGraph, prunable_layers
from .model_io import WeightStore
from .tensors import DTYPE

CRITERIA = ("fscl_l1", "fscl_l2", "l1", "l2", "fpgm")


@dataclass
class ScoreTable:
    criterion: str
    p: int
    layers: dict[str, np.ndarray] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "p": self.p,
            "layers": {nid: [float(x) for x in v] for nid, v in self.layers.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreTable":
        layers = {nid: np.asarray(v, dtype=np.float64)
                  for nid, v in d["layers"].items()}
        return cls(d["criterion"], d["p"], layers)


def _map_norms(maps: np.ndarray, p: int) -> np.ndarray:
    """p-norm over the trailing two (map) axes, in float64."""
    m = maps.astype(np.float64, copy=False)
    if p == 1:
        return np.abs(m).sum(axis=(-1, -2))
    return np.sqrt((m * m).sum(axis=(-1, -2)))


def _center_pad_stack(q: np.ndarray, k: int) -> np.ndarray:
    """Zero-pad an (N, kh, kw) stack to spatial k x k, values centered."""
    top = (k - q.shape[1]) // 2
    left = (k - q.shape[2]) // 2
    pads = ((0, 0), (top, k - q.shape[1] - top), (left, k - q.shape[2] - left))
    return np.pad(q, pads)


def fscl_score(graph: ModelGraph, store: WeightStore, producer: str,
               p: int) -> np.ndarray:
    """Importance of every filter of ``producer`` from its consumer slices.

    Computes, for each filter j0, the mean over all pooled consumer slices of
    the p-norm of the valid cross-correlation between the filter and the
    slice replicated across the filter's input channels. Replication makes
    every channel of the surrogate kernel identical, so the correlation
    equals a 2-d correlation of the channel-summed filter with the slice;
    that reduction is what lets all filters and consumers batch into one
    einsum per consumer layer.
    """
    if p not in (1, 2):
        raise DomainError(f"p must be 1 or 2, got {p}")
    node = graph.nodes.get(producer)
    if node is None or node.kind != "conv":
        raise ScoringError(f"node {producer!r} is not a conv layer")
    w = store[node.weight]
    nf = w.shape[0]
    q = w.astype(np.float64).sum(axis=1)  # (N, Kc, Kc) channel-summed filters
    total = np.zeros(nf, dtype=np.float64)
    count = 0
    consumed = False
    for use in graph.channel_uses(producer):
        if use.kind == "conv":
            consumed = True
            cw = store[graph.nodes[use.node].weight]
            kn = cw.shape[2]
            slices = cw[:, use.offset:use.offset + nf].astype(np.float64)  # (Nn,N,kn,kn)
            qp = _center_pad_stack(q, kn) if kn > q.shape[1] else q
            win = sliding_window_view(qp, (kn, kn), axis=(1, 2))  # (N,ho,wo,kn,kn)
            maps = np.einsum("jabkl,njkl->njab", win, slices, optimize=True)
            total += _map_norms(maps, p).sum(axis=0)
            count += slices.shape[0]
        elif use.kind == "fc":
            consumed = True
            fw = store[graph.nodes[use.node].weight].astype(np.float64)
            s = use.spatial
            cols = np.arange(nf)[:, None] * s + np.arange(s)[None, :]
            block = fw[:, use.offset * s + cols.reshape(-1)]  # (out, N*s)
            # a 1x1 slice replicated over channels correlates to slice-value
            # times the channel-summed filter map, so the p-norm factorizes
            qn = _map_norms(q, p)  # (N,)
            weight_mass = np.abs(block).sum(axis=0).reshape(nf, s).sum(axis=1)
            total += qn * weight_mass
            count += fw.shape[0] * s
    if not consumed:
        raise ScoringError(
            f"node {producer!r} has no downstream conv/fc consumer; exclude it "
            f"from pruning instead of scoring it")
    return total / count


def l1_score(weights: np.ndarray) -> np.ndarray:
    """Per-filter sum of absolute weights."""
    w = np.asarray(weights, dtype=np.float64)
    return np.abs(w).reshape(w.shape[0], -1).sum(axis=1)


def l2_score(weights: np.ndarray) -> np.ndarray:
    """Per-filter Euclidean norm."""
    w = np.asarray(weights, dtype=np.float64)
    flat = w.reshape(w.shape[0], -1)
    return np.sqrt((flat * flat).sum(axis=1))


def fpgm_score(weights: np.ndarray) -> np.ndarray:
    """Sum of Euclidean distances from each filter to every other filter.

    Filters close to the rest of the layer (near the geometric median) score
    low. Distances are computed row by row with norm subtraction, never a
    Gram-matrix expansion, so identical filters score exactly zero.
    """
    w = np.asarray(weights, dtype=np.float64)
    n = w.shape[0]
    if n < 2:
        raise DomainError(f"fpgm needs at least 2 filters, got {n}")
    flat = w.reshape(n, -1)
    scores = np.empty(n, dtype=np.float64)
    for j in range(n):
        d = np.linalg.norm(flat - flat[j], axis=1)
        scores[j] = d.sum()
    return scores


def combine_group_scores(vectors: list[np.ndarray]) -> np.ndarray:
    """Elementwise product of the member scores of a coupled group."""
    if not vectors:
        raise DomainError("cannot combine an empty score list")
    out = np.asarray(vectors[0], dtype=np.float64).copy()
    for v in vectors[1:]:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != out.shape:
            raise DimensionError(
                f"group score lengths differ: {out.shape} vs {v.shape}")
        out = out * v
    return out


def _thread_count(n_tasks: int) -> int:
    cap = os.environ.get("PRUNEKIT_THREADS")
    if cap is not None:
        try:
            cap = int(cap)
        except ValueError:
            raise DomainError(f"PRUNEKIT_THREADS must be an integer, got {cap!r}")
        if cap < 1:
            raise DomainError(f"PRUNEKIT_THREADS must be >= 1, got {cap}")
        return min(cap, max(1, n_tasks))
    return min(os.cpu_count() or 1, max(1, n_tasks), 8)


def score_model(graph: ModelGraph, store: WeightStore, criterion: str,
                exclude: tuple[str, ...] = (), exclude_last: bool = True) -> ScoreTable:
    """Score every prunable layer; coupled groups carry the combined vector.

    Layers are scored independently (optionally in parallel, capped by
    PRUNEKIT_THREADS); each layer's arithmetic runs in a fixed index order,
    so the table is identical for any thread count.
    """
    if criterion not in CRITERIA:
        raise DomainError(f"unknown criterion {criterion!r}, expected one of {CRITERIA}")
    p = 2 if criterion in ("fscl_l2", "l2", "fpgm") else 1
    layers = prunable_layers(graph, exclude, exclude_last)

    def score_one(nid: str) -> np.ndarray:
        if criterion in ("fscl_l1", "fscl_l2"):
            return fscl_score(graph, store, nid, p)
        w = store[graph.nodes[nid].weight]
        if criterion == "l1":
            return l1_score(w)
        if criterion == "l2":
            return l2_score(w)
        return fpgm_score(w)

    workers = _thread_count(len(layers))
    if workers > 1 and len(layers) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vectors = dict(zip(layers, pool.map(score_one, layers)))
    else:
        vectors = {nid: score_one(nid) for nid in layers}

    table = ScoreTable(criterion, p)
    in_group: set[str] = set()
    for group in graph.coupled_groups():
        members = [m for m in group.members if m in vectors]
        if not members:
            continue
        combined = combine_group_scores([vectors[m] for m in members])
        for m in members:
            table.layers[m] = combined
            in_group.add(m)
    for nid in layers:
        if nid not in in_group:
            table.layers[nid] = vectors[nid]
    # preserve topological ordering in the serialized table
    table.layers = {nid: table.layers[nid] for nid in layers}
    return table
