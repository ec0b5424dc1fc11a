"""Seeded random models and weight fills for verification.

Everything here is driven by a numpy Generator so every caller (tests, the
verify command) reproduces the same models from the same seed.
"""
from __future__ import annotations

import numpy as np

from .graph import Edge, ModelGraph, Node
from .model_io import WeightStore
from .tensors import DTYPE


def random_plain_cnn(rng: np.random.Generator, depth: int | None = None,
                     max_channels: int = 8, kernels=(1, 3, 5),
                     input_size: int = 16, relu: bool = True,
                     head: str | None = None) -> tuple[ModelGraph, WeightStore]:
    """A random conv chain: conv [relu] conv ... with optional gap/flatten+fc head.

    All convs use padding kernel//2 and stride 1 so any kernel mix keeps the
    spatial size workable. Every conv except the last is marked prunable.
    """
    depth = int(depth if depth is not None else rng.integers(3, 6))
    channels = [int(rng.integers(1, max_channels + 1)) for _ in range(depth + 1)]
    channels[0] = int(rng.integers(1, 5))
    nodes: list[Node] = []
    edges: list[Edge] = []
    store: WeightStore = {}
    prev = "input"
    for i in range(depth):
        k = int(rng.choice(kernels))
        nid = f"conv{i}"
        nodes.append(Node(nid, "conv", in_channels=channels[i],
                          out_channels=channels[i + 1], kernel=k, stride=1,
                          padding=k // 2, weight=f"{nid}.weight",
                          bias=f"{nid}.bias", prunable=True))
        store[f"{nid}.weight"] = rng.standard_normal(
            (channels[i + 1], channels[i], k, k)).astype(DTYPE)
        store[f"{nid}.bias"] = rng.standard_normal(channels[i + 1]).astype(DTYPE)
        edges.append(Edge(prev, nid))
        prev = nid
        if relu and i < depth - 1:
            rid = f"relu{i}"
            nodes.append(Node(rid, "relu"))
            edges.append(Edge(prev, rid))
            prev = rid
    output = prev
    if head == "gap":
        nodes.append(Node("gap", "gap"))
        edges.append(Edge(prev, "gap"))
        classes = int(rng.integers(2, 11))
        nodes.append(Node("fc", "fc", in_features=channels[depth],
                          out_features=classes, weight="fc.weight", bias="fc.bias"))
        edges.append(Edge("gap", "fc"))
        store["fc.weight"] = rng.standard_normal(
            (classes, channels[depth])).astype(DTYPE)
        store["fc.bias"] = rng.standard_normal(classes).astype(DTYPE)
        output = "fc"
    elif head == "flatten":
        nodes.append(Node("flatten", "flatten"))
        edges.append(Edge(prev, "flatten"))
        feats = channels[depth] * input_size * input_size
        classes = int(rng.integers(2, 11))
        nodes.append(Node("fc", "fc", in_features=feats, out_features=classes,
                          weight="fc.weight", bias="fc.bias"))
        edges.append(Edge("flatten", "fc"))
        store["fc.weight"] = rng.standard_normal((classes, feats)).astype(DTYPE)
        store["fc.bias"] = rng.standard_normal(classes).astype(DTYPE)
        output = "fc"
    graph = ModelGraph("random_plain", (channels[0], input_size, input_size),
                       output, nodes, edges)
    return graph, store


def init_store(graph: ModelGraph, seed: int) -> WeightStore:
    """Deterministic He-normal weights for every tensor a manifest references.

    Convs and fcs draw from N(0, sqrt(2/fan_in)); biases are zero; bn comes
    up as the identity transform (gamma 1, beta 0, mean 0, var 1). Tensors
    fill in sorted node order, so one seed fixes the whole store.
    """
    rng = np.random.default_rng(seed)
    store: WeightStore = {}
    for nid in sorted(graph.nodes):
        n = graph.nodes[nid]
        if n.kind == "conv":
            fan_in = n.in_channels * n.kernel * n.kernel
            std = np.sqrt(2.0 / fan_in)
            store[n.weight] = (rng.standard_normal(
                (n.out_channels, n.in_channels, n.kernel, n.kernel)) * std).astype(DTYPE)
            if n.bias is not None:
                store[n.bias] = np.zeros(n.out_channels, dtype=DTYPE)
        elif n.kind == "fc":
            std = np.sqrt(2.0 / n.in_features)
            store[n.weight] = (rng.standard_normal(
                (n.out_features, n.in_features)) * std).astype(DTYPE)
            if n.bias is not None:
                store[n.bias] = np.zeros(n.out_features, dtype=DTYPE)
        elif n.kind == "bn":
            store[n.gamma] = np.ones(n.channels, dtype=DTYPE)
            store[n.beta] = np.zeros(n.channels, dtype=DTYPE)
            store[n.mean] = np.zeros(n.channels, dtype=DTYPE)
            store[n.var] = np.ones(n.channels, dtype=DTYPE)
    return store


def randomize_store(graph: ModelGraph, seed: int) -> WeightStore:
    """Like init_store but with random bn statistics and nonzero biases."""
    rng = np.random.default_rng(seed)
    store = {}
    for nid in sorted(graph.nodes):
        n = graph.nodes[nid]
        if n.kind == "conv":
            store[n.weight] = rng.standard_normal(
                (n.out_channels, n.in_channels, n.kernel, n.kernel)).astype(DTYPE) * 0.1
            if n.bias is not None:
                store[n.bias] = rng.standard_normal(n.out_channels).astype(DTYPE) * 0.1
        elif n.kind == "fc":
            store[n.weight] = rng.standard_normal(
                (n.out_features, n.in_features)).astype(DTYPE) * 0.1
            if n.bias is not None:
                store[n.bias] = rng.standard_normal(n.out_features).astype(DTYPE) * 0.1
        elif n.kind == "bn":
            store[n.gamma] = (1.0 + 0.1 * rng.standard_normal(n.channels)).astype(DTYPE)
            store[n.beta] = (0.1 * rng.standard_normal(n.channels)).astype(DTYPE)
            store[n.mean] = (0.1 * rng.standard_normal(n.channels)).astype(DTYPE)
            store[n.var] = rng.uniform(0.5, 1.5, n.channels).astype(DTYPE)
    return store
