"""Frozen feature providers: a seeded toy patch encoder and SIQF feature files.

SIQF layout (little-endian)::

    b"SIQF" | u16 version (=1) | u32 C | u32 H | u32 W | C*H*W float64, C-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"SIQF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sHIII")


class FeatureFormatError(ValueError):
    pass


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass
class FeatureMap:
    data: np.ndarray
    source: str = "toy"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or min(self.data.shape) <= 0:
            raise ValueError(f"feature map must be C×H×W with positive extents, got {self.data.shape}")
        c, h, w = self.data.shape
        if not (_is_pow2(h) and _is_pow2(w)):
            raise ValueError(f"feature map spatial extents {h}×{w} must be powers of two")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature map contains non-finite values")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class EncoderConfig:
    patch: int = 8
    channels: int = 16
    seed: int = 0
    extent: int = 128

    def __post_init__(self):
        if self.patch < 2 or self.patch % 2:
            raise ValueError(f"patch size must be even and >= 2, got {self.patch}")
        if self.extent % self.patch:
            raise ValueError(f"image extent {self.extent} not divisible by patch {self.patch}")
        if not _is_pow2(self.extent // self.patch):
            raise ValueError(f"feature grid {self.extent // self.patch} is not a power of two")

    @property
    def grid(self) -> int:
        return self.extent // self.patch


@lru_cache(maxsize=16)
def _projection(patch: int, channels: int, seed: int) -> np.ndarray:
    half = patch // 2
    n = half * half
    rng = np.random.default_rng(seed)
    proj = rng.normal(0.0, 1.0 / patch, size=(channels, n))
    # Zero-sum rows: a flat patch maps to 0, so features carry structure and not mean
    # brightness. The rescale keeps the per-entry variance at 1/P^2.
    proj = (proj - proj.mean(axis=1, keepdims=True)) * np.sqrt(n / (n - 1)) if n > 1 else proj
    proj.setflags(write=False)
    return proj


def projection_weights(cfg: EncoderConfig) -> np.ndarray:
    """The effective C×P² projection (read-only). It is mirror-symmetric inside a patch."""
    half = cfg.patch // 2
    p = _projection(cfg.patch, cfg.channels, cfg.seed).reshape(cfg.channels, half, half)
    top = np.concatenate([p, p[:, :, ::-1]], axis=2)
    full = np.concatenate([top, top[:, ::-1, :]], axis=1)
    return full.reshape(cfg.channels, cfg.patch * cfg.patch)


def _fold(patches: np.ndarray) -> np.ndarray:
    # patches: ...×P×P -> ...×(P/2)×(P/2), summing mirror pairs. x + y == y + x
    # exactly, so flipping the image leaves each folded patch bit-identical.
    p = patches.shape[-1]
    h = p // 2
    cols = patches[..., :, :h] + patches[..., :, ::-1][..., :, :h]
    return cols[..., :h, :] + cols[..., ::-1, :][..., :h, :]


def toy_encode(image: np.ndarray, cfg: EncoderConfig = EncoderConfig()) -> FeatureMap:
    """Encode a grayscale S×S image into a C×(S/P)×(S/P) feature map.

    Each non-overlapping P×P patch is projected by a fixed seeded Gaussian
    matrix (variance 1/P²) and squashed with tanh. Projection rows sum to zero,
    so a flat patch encodes to 0. The projection is symmetric under mirroring
    within a patch, so flipping the image flips the feature grid exactly.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.shape != (cfg.extent, cfg.extent):
        raise ValueError(f"image extent {img.shape} does not match encoder extent {cfg.extent}")
    g, p = cfg.grid, cfg.patch
    patches = img.reshape(g, p, g, p).transpose(0, 2, 1, 3)
    folded = _fold(patches).reshape(g, g, -1)
    proj = _projection(cfg.patch, cfg.channels, cfg.seed)
    feats = np.tanh(np.einsum("ck,ijk->cij", proj, folded))
    return FeatureMap(feats, source="toy")


def save_features(f: FeatureMap, path) -> None:
    c, h, w = f.data.shape
    payload = np.ascontiguousarray(f.data, dtype="<f8").tobytes()
    Path(path).write_bytes(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, c, h, w) + payload)


def load_features(path, source: str = "imported") -> FeatureMap:
    raw = Path(path).read_bytes()
    return decode_features(raw, source=source, name=str(path))


def decode_features(raw: bytes, source: str = "imported", name: str = "<bytes>") -> FeatureMap:
    if len(raw) < _HEADER.size:
        raise FeatureFormatError(f"{name}: truncated header ({len(raw)} bytes)")
    magic, version, c, h, w = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise FeatureFormatError(f"{name}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FeatureFormatError(f"{name}: unsupported version {version}")
    n = c * h * w * 8
    body = raw[_HEADER.size:]
    if len(body) < n:
        raise FeatureFormatError(f"{name}: truncated payload ({len(body)} of {n} bytes)")
    if len(body) > n:
        raise FeatureFormatError(f"{name}: trailing bytes after payload ({len(body) - n} extra)")
    data = np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(c, h, w)
    if np.isnan(data).any():
        raise FeatureFormatError(f"{name}: NaN in payload")
    try:
        return FeatureMap(data, source=source)
    except ValueError as exc:
        raise FeatureFormatError(f"{name}: {exc}") from None
