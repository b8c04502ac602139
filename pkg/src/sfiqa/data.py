"""Synthetic distortion corpus: reference generator, distortions, manifest, splits, flips."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

KINDS = ("blur", "noise", "gain")
SPLITS = ("train", "val", "test")
SPLIT_RATIO = (0.6, 0.2, 0.2)

IMAGE_MAGIC = b"SIQI"
IMAGE_VERSION = 1
_IMAGE_HEADER = struct.Struct("<4sHHII")  # magic, version, reserved, S, reserved -> 16 bytes


class ImageFormatError(ValueError):
    pass


# --- images ------------------------------------------------------------------

def gen_reference(seed: int, extent: int = 128) -> np.ndarray:
    """Seeded mix of smooth sinusoid fields, a finer texture and flat blocks, clamped to [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:extent, 0:extent] / extent
    img = np.full((extent, extent), 0.5)
    for _ in range(4):
        fy, fx = rng.uniform(0.5, 4.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        img += rng.uniform(0.05, 0.2) * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    fy, fx = rng.uniform(8.0, 20.0, size=2) * rng.choice([-1, 1], size=2)
    img += rng.uniform(0.03, 0.1) * np.sin(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
    for _ in range(rng.integers(3, 7)):
        h, w = rng.integers(extent // 16, extent // 3, size=2)
        y0, x0 = rng.integers(0, extent - h), rng.integers(0, extent - w)
        img[y0:y0 + h, x0:x0 + w] = rng.uniform(0.0, 1.0) * 0.7 + img[y0:y0 + h, x0:x0 + w] * 0.3
    return np.clip(img, 0.0, 1.0)


@dataclass(frozen=True)
class DistortionSpec:
    kind: str
    level: int
    levels: int = 5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}; expected one of {KINDS}")
        if not 1 <= self.level <= self.levels:
            raise ValueError(f"level {self.level} outside 1..{self.levels}")

    @property
    def parameter(self) -> float:
        if self.kind == "blur":
            return 0.5 * self.level
        if self.kind == "noise":
            return 0.05 * self.level
        return 1.0 - 0.12 * self.level

    @property
    def label(self) -> float:
        return label_for(self.level, self.levels)


def label_for(level: int, levels: int) -> float:
    return 1.0 - level / (levels + 1)


def gaussian_kernel(sigma: float) -> np.ndarray:
    if sigma <= 0:
        return np.ones(1)
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    if r == 0:
        return img.copy()
    out = img
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="reflect")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for i, kv in enumerate(k):
            acc += kv * (padded[i:i + n] if axis == 0 else padded[:, i:i + n])
        out = acc
    return out


def apply_distortion(img: np.ndarray, spec: DistortionSpec, noise_seed: int = 0) -> np.ndarray:
    if spec.kind == "blur":
        return np.clip(gaussian_blur(img, spec.parameter), 0.0, 1.0)
    if spec.kind == "noise":
        rng = np.random.default_rng(noise_seed)
        return np.clip(img + rng.normal(0.0, spec.parameter, img.shape), 0.0, 1.0)
    if spec.kind == "gain":
        return np.clip(img * spec.parameter, 0.0, 1.0)
    raise ValueError(f"unknown distortion kind {spec.kind!r}")


def save_image(img: np.ndarray, path) -> None:
    s = img.shape[0]
    if img.shape != (s, s):
        raise ValueError(f"images must be square, got {img.shape}")
    payload = np.ascontiguousarray(img, dtype="<f8").tobytes()
    Path(path).write_bytes(_IMAGE_HEADER.pack(IMAGE_MAGIC, IMAGE_VERSION, 0, s, 0) + payload)


def load_image(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _IMAGE_HEADER.size:
        raise ImageFormatError(f"{path}: truncated header")
    magic, version, _, s, _ = _IMAGE_HEADER.unpack_from(raw)
    if magic != IMAGE_MAGIC:
        raise ImageFormatError(f"{path}: bad magic {magic!r}")
    if version != IMAGE_VERSION:
        raise ImageFormatError(f"{path}: unsupported version {version}")
    body = raw[_IMAGE_HEADER.size:]
    if len(body) != s * s * 8:
        raise ImageFormatError(f"{path}: payload is {len(body)} bytes, expected {s * s * 8}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(s, s)


# --- flips -------------------------------------------------------------------

def draw_flips(rng: np.random.Generator) -> tuple[bool, bool]:
    return bool(rng.random() < 0.5), bool(rng.random() < 0.5)


def apply_flips(arr: np.ndarray, horizontal: bool, vertical: bool) -> np.ndarray:
    """Flip the two trailing axes; works for S×S images and C×H×W feature maps alike."""
    if horizontal:
        arr = arr[..., :, ::-1]
    if vertical:
        arr = arr[..., ::-1, :]
    return np.ascontiguousarray(arr)


def augment_flips(images: Iterable[np.ndarray], rng: np.random.Generator, enabled: bool = True) -> list[np.ndarray]:
    """Apply one random (horizontal, vertical) flip draw to every image of a pair."""
    images = list(images)
    if not enabled:
        return images
    h, v = draw_flips(rng)
    return [apply_flips(im, h, v) for im in images]


# --- corpus + manifest -------------------------------------------------------

@dataclass
class CorpusConfig:
    seed: int = 7
    refs: int = 60
    levels: int = 5
    extent: int = 128
    kinds: tuple[str, ...] = KINDS


@dataclass
class Sample:
    id: str
    ref_id: str
    split: str
    kind: str
    level: int
    label: float
    ref: str
    dist: str


@dataclass
class Manifest:
    config: CorpusConfig
    samples: list[Sample] = field(default_factory=list)
    root: Path | None = None

    def split(self, name: str) -> list[Sample]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [s for s in self.samples if s.split == name]

    def path(self, rel: str) -> Path:
        return (self.root or Path(".")) / rel

    def dumps(self) -> str:
        header = {"type": "header", "version": 1, **asdict(self.config)}
        header["kinds"] = list(self.config.kinds)
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps({"type": "sample", **asdict(s)}, sort_keys=True) for s in self.samples]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        lines = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        if not lines or lines[0].get("type") != "header":
            raise ValueError(f"{path}: manifest must start with a header record")
        head = dict(lines[0])
        head.pop("type")
        head.pop("version", None)
        head["kinds"] = tuple(head["kinds"])
        samples = []
        for rec in lines[1:]:
            rec = dict(rec)
            rec.pop("type", None)
            samples.append(Sample(**rec))
        return cls(CorpusConfig(**head), samples, root=path.parent)


def split_references(n_refs: int, seed: int) -> dict[int, str]:
    """Seeded 60/20/20 assignment of reference indices to splits."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FFEE]))
    order = rng.permutation(n_refs)
    n_train = round(SPLIT_RATIO[0] * n_refs)
    n_val = round(SPLIT_RATIO[1] * n_refs)
    assign = {}
    for pos, ref in enumerate(order):
        assign[int(ref)] = "train" if pos < n_train else ("val" if pos < n_train + n_val else "test")
    return assign


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def make_corpus(cfg: CorpusConfig, out_dir) -> Manifest:
    """Generate references and every (kind, level) distortion, write images and manifest.jsonl."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    assign = split_references(cfg.refs, cfg.seed)
    manifest = Manifest(cfg, root=out)
    for r in range(cfg.refs):
        ref_id = f"ref{r:03d}"
        ref = gen_reference(_seed(cfg.seed, r), cfg.extent)
        ref_rel = f"images/{ref_id}.siqi"
        save_image(ref, out / ref_rel)
        for k, kind in enumerate(cfg.kinds):
            for level in range(1, cfg.levels + 1):
                spec = DistortionSpec(kind, level, cfg.levels)
                sid = f"{ref_id}_{kind}{level}"
                dist = apply_distortion(ref, spec, noise_seed=_seed(cfg.seed, r, k, level))
                rel = f"images/{sid}.siqi"
                save_image(dist, out / rel)
                manifest.samples.append(Sample(sid, ref_id, assign[r], kind, level, spec.label, ref_rel, rel))
    manifest.save(out / "manifest.jsonl")
    return manifest
