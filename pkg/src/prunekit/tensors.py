"""Dense tensor storage rules and the numeric kernels shared by all modules.

Weight tensors are float32 numpy arrays, C-contiguous, laid out
(filters, channels, height, width). Kernels accumulate in float64 so
results are independent of operand blocking and thread count.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, DomainError

DTYPE = np.float32


def as_f32(data, rank: int | None = None, name: str = "tensor") -> np.ndarray:
    """Coerce ``data`` to a contiguous float32 array, optionally pinning its rank."""
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    if rank is not None and arr.ndim != rank:
        raise DimensionError(f"{name}: expected rank {rank}, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError(f"{name}: empty tensor with shape {arr.shape}")
    return arr


def xcorr_valid(input: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-mode cross-correlation of two (C, H, W) tensors, summed over channels.

    out[y, x] = sum_c sum_{k1,k2} input[c, y+k1, x+k2] * kernel[c, k1, k2]

    Returns an (H-kh+1, W-kw+1) float32 map; sums run in float64.
    """
    a = as_f32(input, 3, "input")
    k = as_f32(kernel, 3, "kernel")
    if a.shape[0] != k.shape[0]:
        raise DimensionError(f"channel mismatch: input {a.shape} vs kernel {k.shape}")
    if k.shape[1] > a.shape[1] or k.shape[2] > a.shape[2]:
        raise DimensionError(f"kernel {k.shape} larger than input {a.shape}")
    win = sliding_window_view(a, (k.shape[1], k.shape[2]), axis=(1, 2))
    out = np.einsum("cyxkl,ckl->yx", win.astype(np.float64), k.astype(np.float64))
    return out.astype(DTYPE)


def pad_center(t: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Zero-pad a (C, h, w) tensor to spatial ``target``, original values centered.

    When the total padding along an axis is odd the extra row/column goes to
    the bottom/right.
    """
    a = as_f32(t, 3, "tensor")
    th, tw = target
    if th < a.shape[1] or tw < a.shape[2]:
        raise DimensionError(f"target {target} smaller than spatial dims {a.shape[1:]}")
    top = (th - a.shape[1]) // 2
    left = (tw - a.shape[2]) // 2
    pads = ((0, 0), (top, th - a.shape[1] - top), (left, tw - a.shape[2] - left))
    return np.pad(a, pads)


def replicate_slice(slice2d: np.ndarray, channels: int) -> np.ndarray:
    """Stack a (kh, kw) slice ``channels`` times into a (channels, kh, kw) tensor."""
    s = as_f32(slice2d, 2, "slice")
    if channels < 1:
        raise DomainError(f"channel count must be >= 1, got {channels}")
    return np.repeat(s[None, :, :], channels, axis=0)


def p_norm(t: np.ndarray, p: int) -> float:
    """l1 (sum of absolute values) or l2 (sqrt of sum of squares) of any tensor."""
    if p not in (1, 2):
        raise DomainError(f"p must be 1 or 2, got {p}")
    a = np.asarray(t, dtype=np.float64)
    if p == 1:
        return float(np.abs(a).sum())
    return float(np.sqrt((a * a).sum()))
