"""Regression heads: FR (distances -> score) and NR (features -> score)."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

HIDDEN = 64


def init_mlp(prefix: str, widths: Sequence[int], rng: np.random.Generator) -> dict[str, Tensor]:
    params = {}
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        params[f"{prefix}.{i}.w"] = T.parameter(rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, n_out)))
        params[f"{prefix}.{i}.b"] = T.parameter(np.zeros(n_out))
    return params


def mlp_layers(params: dict[str, Tensor], prefix: str) -> list[tuple[Tensor, Tensor]]:
    layers = []
    i = 0
    while f"{prefix}.{i}.w" in params:
        layers.append((params[f"{prefix}.{i}.w"], params[f"{prefix}.{i}.b"]))
        i += 1
    if not layers:
        raise KeyError(f"no MLP named {prefix!r} in parameter set")
    return layers


def mlp_forward(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    """Affine + ReLU for all but the last layer, which stays affine."""
    layers = mlp_layers(params, prefix)
    if x.shape[-1] != layers[0][0].shape[0]:
        raise ShapeError(f"{prefix}: input width {x.shape[-1]} != first layer width {layers[0][0].shape[0]}")
    for i, (w, b) in enumerate(layers):
        x = T.add(T.matmul(x, w), b)
        if i < len(layers) - 1:
            x = T.relu(x)
    return x


def init_frrb(width_s: int | None, width_f: int | None, rng: np.random.Generator) -> dict[str, Tensor]:
    """``width_*`` is the distance-vector width of that branch, or None when the branch is disabled."""
    params: dict[str, Tensor] = {}
    joint = 0
    if width_s is not None:
        params.update(init_mlp("frrb.f", [width_s, HIDDEN, HIDDEN], rng))
        joint += HIDDEN
    if width_f is not None:
        params.update(init_mlp("frrb.g", [width_f, HIDDEN, HIDDEN], rng))
        joint += HIDDEN
    if not joint:
        raise ValueError("FRRB needs at least one branch")
    params.update(init_mlp("frrb.phi", [joint, HIDDEN, 1], rng))
    return params


def _squeeze_score(y: Tensor) -> Tensor:
    return T.sigmoid(T.reshape(y, y.shape[:-1]))


def frrb_forward(d_s: Tensor | None, d_f: Tensor | None, params: dict[str, Tensor]) -> Tensor:
    parts = []
    if d_s is not None:
        parts.append(mlp_forward(d_s, params, "frrb.f"))
    if d_f is not None:
        parts.append(mlp_forward(d_f, params, "frrb.g"))
    if not parts:
        raise ValueError("frrb_forward needs at least one distance vector")
    joint = parts[0] if len(parts) == 1 else T.concat(parts, axis=-1)
    return _squeeze_score(mlp_forward(joint, params, "frrb.phi"))


def init_nrrb(channels_s: int | None, channels_f: int | None, rng: np.random.Generator) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    joint = 0
    if channels_s is not None:
        params.update(init_mlp("nrrb.eta_s", [channels_s, HIDDEN, HIDDEN], rng))
        joint += HIDDEN
    if channels_f is not None:
        params.update(init_mlp("nrrb.eta_f", [channels_f, HIDDEN, HIDDEN], rng))
        joint += HIDDEN
    if not joint:
        raise ValueError("NRRB needs at least one branch")
    params.update(init_mlp("nrrb.phi", [joint, HIDDEN, 1], rng))
    return params


def nrrb_forward(f_s: Tensor | None, f_f: Tensor | None, params: dict[str, Tensor]) -> Tensor:
    """Global-average-pool each map to a channel vector, embed, concat, regress."""
    parts = []
    if f_s is not None:
        parts.append(mlp_forward(T.mean(f_s, axis=(-2, -1)), params, "nrrb.eta_s"))
    if f_f is not None:
        parts.append(mlp_forward(T.mean(f_f, axis=(-2, -1)), params, "nrrb.eta_f"))
    if not parts:
        raise ValueError("nrrb_forward needs at least one feature map")
    joint = parts[0] if len(parts) == 1 else T.concat(parts, axis=-1)
    return _squeeze_score(mlp_forward(joint, params, "nrrb.phi"))
