"""Feature distances between distorted and reference SFEM outputs.

All metrics take C×H×W (or N×C×H×W) maps and reduce per channel, except
``sub`` which returns the flattened raw difference.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

METRICS = ("sub", "l1", "l2", "cos", "kld")
_NORM_EPS = 1e-12


def _flat_channels(x: Tensor) -> Tensor:
    # (..., C, H, W) -> (..., C, H*W)
    return T.reshape(x, x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


def dist_l1(a: Tensor, b: Tensor) -> Tensor:
    return T.mean_abs_per_channel(a, b)


def dist_sub(a: Tensor, b: Tensor) -> Tensor:
    T._check_same(a, b, "dist_sub")
    d = T.sub(a, b)
    lead = a.shape[:-3]
    return T.reshape(d, lead + (int(np.prod(a.shape[-3:])),))


def dist_l2(a: Tensor, b: Tensor) -> Tensor:
    T._check_same(a, b, "dist_l2")
    d = T.sub(a, b)
    return T.sqrt(T.mean(T.mul(d, d), axis=(-2, -1)))


def dist_cos(a: Tensor, b: Tensor) -> Tensor:
    """Per-channel 1 - cosine similarity; near-zero channel vectors give 0 (both) or 1 (one)."""
    T._check_same(a, b, "dist_cos")
    fa, fb = _flat_channels(a), _flat_channels(b)
    dot = T.sum_(T.mul(fa, fb), axis=-1)
    na = T.sqrt(T.sum_(T.mul(fa, fa), axis=-1))
    nb = T.sqrt(T.sum_(T.mul(fb, fb), axis=-1))
    small_a = na.data < _NORM_EPS
    small_b = nb.data < _NORM_EPS
    degenerate = small_a | small_b
    if not degenerate.any():
        return T.add_scalar(T.scale(T.div(dot, T.mul(na, nb)), -1.0), 1.0)
    # keep the graph well-defined on degenerate channels, then overwrite them
    safe = T.add(T.mul(na, nb), Tensor(np.where(degenerate, 1.0, 0.0)))
    sim = T.div(dot, safe)
    keep = Tensor(np.where(degenerate, 0.0, 1.0))
    fill = np.where(small_a & small_b, 0.0, 1.0) * degenerate
    return T.add(T.add_scalar(T.scale(T.mul(sim, keep), -1.0), 1.0), Tensor(fill - degenerate))


def dist_kld(a: Tensor, b: Tensor) -> Tensor:
    """Per-channel KL(softmax(a_c) || softmax(b_c)) over spatial positions."""
    T._check_same(a, b, "dist_kld")
    la = T.log_softmax(_flat_channels(a), axis=-1)
    lb = T.log_softmax(_flat_channels(b), axis=-1)
    pa = T.exp(la)
    return T.sum_(T.mul(pa, T.sub(la, lb)), axis=-1)


_DISPATCH = {"sub": dist_sub, "l1": dist_l1, "l2": dist_l2, "cos": dist_cos, "kld": dist_kld}


def distance(metric: str, a: Tensor, b: Tensor) -> Tensor:
    try:
        fn = _DISPATCH[metric]
    except KeyError:
        raise ValueError(f"unknown distance metric {metric!r}; expected one of {METRICS}") from None
    return fn(a, b)


def distance_width(metric: str, channels: int, pooled: int) -> int:
    if metric not in _DISPATCH:
        raise ValueError(f"unknown distance metric {metric!r}")
    return channels * pooled * pooled if metric == "sub" else channels


__all__ = ["METRICS", "ShapeError", "dist_cos", "dist_kld", "dist_l1", "dist_l2", "dist_sub", "distance",
           "distance_width"]
