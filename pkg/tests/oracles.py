"""Independent reference implementations used to check package results.

Everything here is written as plain loops over indices, no shared code with
the package's vectorized paths. Slow on purpose.
"""
from __future__ import annotations

import math

import numpy as np


def naive_xcorr_valid(inp: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Quadruple-loop valid cross-correlation summed over channels."""
    c, h, w = inp.shape
    ck, kh, kw = kernel.shape
    assert c == ck
    out = np.zeros((h - kh + 1, w - kw + 1), dtype=np.float64)
    for y in range(out.shape[0]):
        for x in range(out.shape[1]):
            acc = 0.0
            for ci in range(c):
                for i in range(kh):
                    for j in range(kw):
                        acc += float(inp[ci, y + i, x + j]) * float(kernel[ci, i, j])
            out[y, x] = acc
    return out


def naive_pnorm(t: np.ndarray, p: int) -> float:
    acc = 0.0
    for v in np.asarray(t, dtype=np.float64).ravel():
        acc += abs(v) if p == 1 else v * v
    return acc if p == 1 else math.sqrt(acc)


def center_pad(t: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Center a (C, h, w) block in a zero (C, th, tw) block, extras bottom/right."""
    c, h, w = t.shape
    out = np.zeros((c, th, tw), dtype=np.float64)
    top = (th - h) // 2
    left = (tw - w) // 2
    out[:, top:top + h, left:left + w] = t
    return out


def fscl_from_entries(producer_w: np.ndarray, entries: list[np.ndarray],
                      p: int) -> np.ndarray:
    """Direct transcription of the consumer-similarity score.

    ``entries`` is the pooled list of consumer channel slices for each
    producer filter index: entries[k] has shape (n_filters, kh, kw) giving
    the slice of consumer entry k for every producer filter. Each slice is
    replicated across the producer's input channels, correlated in valid
    mode (with center padding when the slice outgrows the filter), and the
    p-norm of the map is averaged over entries.
    """
    nf, cc, kc, _ = producer_w.shape
    scores = np.zeros(nf, dtype=np.float64)
    for j0 in range(nf):
        acc = 0.0
        for slices in entries:
            s = slices[j0]
            kh, kw = s.shape
            rep = np.stack([s] * cc, axis=0)
            prod = producer_w[j0].astype(np.float64)
            if kh > kc or kw > kc:
                prod = center_pad(prod, max(kh, kc), max(kw, kc))
            acc += naive_pnorm(naive_xcorr_valid(prod, rep), p)
        scores[j0] = acc / len(entries)
    return scores


def chain_consumer_entries(consumer_w: np.ndarray) -> list[np.ndarray]:
    """Entry list for a plain chain: one entry per consumer filter."""
    return [consumer_w[jn].astype(np.float64) for jn in range(consumer_w.shape[0])]


def fc_consumer_entries(fc_w: np.ndarray, channels: int,
                        spatial: int) -> list[np.ndarray]:
    """Entry list for an fc consumer: one 1x1 slice per neuron per position."""
    entries = []
    for k in range(fc_w.shape[0]):
        for s in range(spatial):
            cols = np.array([fc_w[k, m * spatial + s] for m in range(channels)],
                            dtype=np.float64)
            entries.append(cols.reshape(channels, 1, 1))
    return entries


def naive_fpgm(weights: np.ndarray) -> np.ndarray:
    """Explicit double loop over filter pairs."""
    n = weights.shape[0]
    flat = np.asarray(weights, dtype=np.float64).reshape(n, -1)
    out = np.zeros(n, dtype=np.float64)
    for j in range(n):
        for k in range(n):
            if j == k:
                continue
            acc = 0.0
            for d in range(flat.shape[1]):
                diff = flat[j, d] - flat[k, d]
                acc += diff * diff
            out[j] += math.sqrt(acc)
    return out


def average_ranks(v: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, ties getting the average of their positions."""
    v = np.asarray(v, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.zeros(len(v), dtype=np.float64)
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def naive_spearman(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of average ranks."""
    ra = average_ranks(a)
    rb = average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float((ra * ra).sum()) * float((rb * rb).sum()))
    if denom == 0.0:
        return float("nan")
    return float((ra * rb).sum()) / denom


def conv_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def naive_conv2d_single(x: np.ndarray, w: np.ndarray, bias: float,
                        y: int, xx: int, stride: int, padding: int) -> float:
    """One output position of a conv, by the definition's triple sum."""
    c, kh, kw = w.shape
    acc = float(bias)
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                yy = y * stride + i - padding
                xj = xx * stride + j - padding
                if 0 <= yy < x.shape[1] and 0 <= xj < x.shape[2]:
                    acc += float(x[ci, yy, xj]) * float(w[ci, i, j])
    return acc
