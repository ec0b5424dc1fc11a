"""Deterministic forward-pass evaluator.

Exists to verify surgery and convolution semantics, not to be fast. All
arithmetic accumulates in float64 in a fixed index order and stores float32,
so identical inputs give bit-identical outputs regardless of PRUNEKIT_THREADS.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, StructuralError
from .graph import INPUT, ModelGraph
from .model_io import WeightStore
from .tensors import DTYPE


def _pad_spatial(x: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                  constant_values=value)


def _windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    # (B, C, Ho, Wo, k, k) view over the padded input
    w = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    return w[:, :, ::stride, ::stride]


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None,
           stride: int, padding: int) -> np.ndarray:
    b, c, h, wd = x.shape
    n, cw, kh, kw = weight.shape
    if c != cw:
        raise StructuralError(f"conv input has {c} channels, weights expect {cw}")
    xp = _pad_spatial(x, padding)
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise StructuralError(
            f"conv kernel {kh}x{kw} larger than padded input {xp.shape[2]}x{xp.shape[3]}")
    win = _windows(xp, kh, stride)
    out = np.einsum("bcyxkl,nckl->bnyx", win.astype(np.float64),
                    weight.astype(np.float64), optimize=True)
    if bias is not None:
        out += bias.astype(np.float64)[None, :, None, None]
    return out.astype(DTYPE)


def maxpool2d(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    xp = _pad_spatial(x, padding, value=-np.inf)
    win = _windows(xp, kernel, stride)
    return win.max(axis=(4, 5)).astype(DTYPE)


def avgpool2d(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    # zero padding counts toward the divisor (count_include_pad)
    xp = _pad_spatial(x, padding, value=0.0)
    win = _windows(xp, kernel, stride)
    return win.astype(np.float64).mean(axis=(4, 5)).astype(DTYPE)


def batchnorm(x: np.ndarray, gamma, beta, mean, var, eps: float) -> np.ndarray:
    g = gamma.astype(np.float64)[None, :, None, None]
    b = beta.astype(np.float64)[None, :, None, None]
    m = mean.astype(np.float64)[None, :, None, None]
    v = var.astype(np.float64)[None, :, None, None]
    return (g * (x.astype(np.float64) - m) / np.sqrt(v + eps) + b).astype(DTYPE)


def forward(graph: ModelGraph, store: WeightStore, x: np.ndarray,
            keep_activations: bool = False):
    """Evaluate the graph on a (B, C, H, W) batch.

    Returns the output node's activation, rank-2 (B, F) after a flatten/gap
    head or rank-4 otherwise. With keep_activations, returns
    (output, {node id: activation}).
    """
    x = np.ascontiguousarray(x, dtype=DTYPE)
    if x.ndim != 4:
        raise DimensionError(f"input must be rank-4 (B,C,H,W), got rank {x.ndim}")
    if tuple(x.shape[1:]) != graph.input_shape:
        raise StructuralError(
            f"input shape {tuple(x.shape[1:])} does not match manifest {graph.input_shape}")
    acts: dict[str, np.ndarray] = {INPUT: x}
    for nid in graph.topo:
        n = graph.nodes[nid]
        ins = [acts[e.src] for e in graph.in_edges(nid)]
        a = ins[0]
        if n.kind == "conv":
            bias = store[n.bias] if n.bias is not None else None
            out = conv2d(a, store[n.weight], bias, n.stride, n.padding)
        elif n.kind == "bn":
            if a.shape[1] != n.channels:
                raise StructuralError(f"node {nid!r}: bn expects {n.channels} channels, "
                                      f"got {a.shape[1]}")
            out = batchnorm(a, store[n.gamma], store[n.beta], store[n.mean],
                            store[n.var], n.eps)
        elif n.kind == "relu":
            out = np.maximum(a, 0)
        elif n.kind == "pool":
            fn = maxpool2d if n.mode == "max" else avgpool2d
            out = fn(a, n.kernel, n.stride, n.padding)
        elif n.kind == "concat":
            out = np.concatenate(ins, axis=1)
        elif n.kind == "add":
            shapes = {t.shape for t in ins}
            if len(shapes) != 1:
                raise StructuralError(f"node {nid!r}: add inputs have shapes {shapes}")
            acc = ins[0].astype(np.float64)
            for t in ins[1:]:
                acc = acc + t.astype(np.float64)
            out = acc.astype(DTYPE)
        elif n.kind == "pad":
            sub = a[:, :, ::n.stride, ::n.stride]
            out = np.zeros((sub.shape[0], n.out_channels, sub.shape[2], sub.shape[3]),
                           dtype=DTYPE)
            out[:, n.front:n.front + sub.shape[1]] = sub
        elif n.kind == "flatten":
            out = np.ascontiguousarray(a).reshape(a.shape[0], -1)
        elif n.kind == "gap":
            out = a.astype(np.float64).mean(axis=(2, 3)).astype(DTYPE)
        elif n.kind == "fc":
            if a.ndim != 2:
                raise StructuralError(f"node {nid!r}: fc needs a rank-2 input, got rank {a.ndim}")
            w = store[n.weight]
            if a.shape[1] != w.shape[1]:
                raise StructuralError(f"node {nid!r}: fc expects {w.shape[1]} features, "
                                      f"got {a.shape[1]}")
            out = a.astype(np.float64) @ w.astype(np.float64).T
            if n.bias is not None:
                out = out + store[n.bias].astype(np.float64)
            out = out.astype(DTYPE)
        else:  # pragma: no cover - validation rejects unknown kinds
            raise StructuralError(f"node {nid!r}: cannot evaluate kind {n.kind!r}")
        acts[nid] = out
    result = acts[graph.output]
    if keep_activations:
        return result, acts
    return result


def compare_outputs(a: np.ndarray, b: np.ndarray,
                    tol: float = 0.0) -> tuple[float, bool]:
    """Max absolute elementwise difference, and whether it is within tol."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"output shapes differ: {a.shape} vs {b.shape}")
    diff = 0.0 if a.size == 0 else float(np.max(np.abs(a - b)))
    return diff, diff <= tol
