"""Spatial-frequency feature extraction: multi-scale conv and Fourier-conv branches.

One parameter set is shared by the reference and distorted inputs; callers
stack both along the batch axis and run a single forward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .spectral import fourier_conv
from .tensor import Tensor

BRANCH_SPATIAL = "b"
BRANCH_FREQUENCY = "f"


def parse_branches(mask: str) -> tuple[bool, bool]:
    mask = mask.lower()
    if not mask or set(mask) - {"b", "f"}:
        raise ValueError(f"branch mask must be a non-empty combination of 'b' and 'f', got {mask!r}")
    return "b" in mask, "f" in mask


@dataclass(frozen=True)
class SfemConfig:
    channels: int = 16
    extent: int = 16
    scales: int = 3
    kernel: int = 3
    pooled: int = 4
    branches: str = "bf"

    def __post_init__(self):
        parse_branches(self.branches)
        if self.scales < 1:
            raise ValueError("scales must be >= 1")
        if self.kernel % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.kernel}")
        smallest = self.extent >> (self.scales - 1)
        if smallest << (self.scales - 1) != self.extent or smallest < 1:
            raise ValueError(f"extent {self.extent} not divisible by 2^{self.scales - 1}")
        if self.extent & (self.extent - 1):
            raise ValueError(f"extent {self.extent} is not a power of two")
        if self.pooled < 1 or self.pooled > smallest:
            raise ValueError(f"pooled extent {self.pooled} exceeds smallest scale {smallest}")

    @property
    def use_spatial(self) -> bool:
        return parse_branches(self.branches)[0]

    @property
    def use_frequency(self) -> bool:
        return parse_branches(self.branches)[1]

    @property
    def out_channels(self) -> int:
        return self.scales * self.channels


class SfemOutput(NamedTuple):
    spatial: Tensor | None
    frequency: Tensor | None


def init_sfem(cfg: SfemConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    c, k = cfg.channels, cfg.kernel
    params: dict[str, Tensor] = {}
    for s in range(cfg.scales):
        if cfg.use_spatial:
            for layer in (1, 2):
                std = np.sqrt(2.0 / (c * k * k))
                params[f"sfem.s{s}.conv{layer}.w"] = T.parameter(rng.normal(0.0, std, (c, c, k, k)))
                params[f"sfem.s{s}.conv{layer}.b"] = T.parameter(np.zeros(c))
        if cfg.use_frequency:
            std = np.sqrt(1.0 / (2 * c))
            params[f"sfem.s{s}.fourier.w"] = T.parameter(rng.normal(0.0, std, (2 * c, 2 * c, 1, 1)))
            params[f"sfem.s{s}.fourier.b"] = T.parameter(np.zeros(2 * c))
    return params


def build_pyramid(f: Tensor, scales: int) -> list[Tensor]:
    if scales < 1:
        raise ValueError("scales must be >= 1")
    h, w = f.shape[-2:]
    if h % (1 << (scales - 1)) or w % (1 << (scales - 1)):
        raise ValueError(f"extent {h}×{w} underflows {scales} halvings")
    levels = [f]
    for _ in range(scales - 1):
        h, w = h // 2, w // 2
        levels.append(T.adaptive_avg_pool2d(levels[-1], h, w))
    return levels


def spatial_branch(f: Tensor, params: dict[str, Tensor], scale: int = 0) -> Tensor:
    x = f
    for layer in (1, 2):
        x = T.relu(T.conv2d(x, params[f"sfem.s{scale}.conv{layer}.w"], params[f"sfem.s{scale}.conv{layer}.b"],
                            padding="same"))
    return x


def frequency_branch(f: Tensor, params: dict[str, Tensor], scale: int = 0) -> Tensor:
    return fourier_conv(f, params[f"sfem.s{scale}.fourier.w"], params[f"sfem.s{scale}.fourier.b"])


def sfem_forward(f: Tensor, params: dict[str, Tensor], cfg: SfemConfig) -> SfemOutput:
    """Run both branches on every pyramid level, pool to ``cfg.pooled`` and concat channels.

    ``f`` is C×H×W or N×C×H×W; disabled branches come back as ``None``.
    """
    if f.shape[-3] != cfg.channels:
        raise ValueError(f"input has {f.shape[-3]} channels, config expects {cfg.channels}")
    p = cfg.pooled
    spatial, freq = [], []
    for s, level in enumerate(build_pyramid(f, cfg.scales)):
        if cfg.use_spatial:
            spatial.append(T.adaptive_avg_pool2d(spatial_branch(level, params, s), p, p))
        if cfg.use_frequency:
            freq.append(T.adaptive_avg_pool2d(frequency_branch(level, params, s), p, p))
    axis = -3
    return SfemOutput(
        T.concat(spatial, axis) if spatial else None,
        T.concat(freq, axis) if freq else None,
    )
