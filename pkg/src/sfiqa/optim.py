"""L1 loss, Adam, SIQC checkpoints and the training loop."""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .data import Manifest, Sample, apply_flips, draw_flips
from .encoder import load_features
from .evalm import UndefinedMetric, srcc
from .model import IqaModel, ModelConfig, config_hash
from .sfem import SfemConfig
from .tensor import Tensor

log = logging.getLogger(__name__)

CKPT_MAGIC = b"SIQC"
CKPT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointFormatError(ValueError):
    pass


def l1_loss(pred: Tensor, label) -> Tensor:
    """Mean absolute error; a single pair gives |pred - label|."""
    label = label if isinstance(label, Tensor) else Tensor(label)
    return T.mean(T.abs_(T.sub(pred, label)))


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 2e-5, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise TrainingError(f"parameter {name!r} has no gradient")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.zero_grad()

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v.copy() for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v.copy() for k, v in self.v.items()})
        out["adam.t"] = np.array(float(self.t))
        return out

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.m[k] = tensors[f"adam.m.{k}"].copy()
            self.v[k] = tensors[f"adam.v.{k}"].copy()
        self.t = int(tensors["adam.t"])


# --- checkpoints -------------------------------------------------------------

def encode_checkpoint(tensors: dict[str, np.ndarray]) -> bytes:
    """SIQC: magic, u16 version, u32 count, then (u32 name len, name, u32 rank, u32 extents, f64 payload)."""
    parts = [struct.pack("<4sHI", CKPT_MAGIC, CKPT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(raw: bytes, name: str = "<bytes>") -> dict[str, np.ndarray]:
    def need(off: int, n: int, what: str) -> None:
        if off + n > len(raw):
            raise CheckpointFormatError(f"{name}: truncated while reading {what}")

    need(0, 10, "header")
    magic, version, count = struct.unpack_from("<4sHI", raw, 0)
    if magic != CKPT_MAGIC:
        raise CheckpointFormatError(f"{name}: bad magic {magic!r}")
    if version != CKPT_VERSION:
        raise CheckpointFormatError(f"{name}: unsupported version {version}")
    off = 10
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        need(off, 4, "name length")
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        need(off, nlen, "name")
        tname = raw[off:off + nlen].decode("utf-8")
        off += nlen
        need(off, 4, f"rank of {tname}")
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        need(off, 4 * rank, f"extents of {tname}")
        shape = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        n = int(np.prod(shape)) * 8
        need(off, n, f"payload of {tname}")
        out[tname] = np.frombuffer(raw, dtype="<f8", count=n // 8, offset=off).astype(np.float64).reshape(shape)
        off += n
    if off != len(raw):
        raise CheckpointFormatError(f"{name}: {len(raw) - off} trailing bytes")
    return out


def save_checkpoint(tensors: dict[str, np.ndarray], path) -> None:
    Path(path).write_bytes(encode_checkpoint(tensors))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes(), name=str(path))


def _meta_tensor(meta: dict) -> np.ndarray:
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    return np.frombuffer(blob, dtype=np.uint8).astype(np.float64)


def _meta_from_tensor(arr: np.ndarray) -> dict:
    return json.loads(bytes(arr.astype(np.uint8).tolist()).decode("utf-8"))


@dataclass
class Checkpoint:
    """Named parameters, optional Adam state and the run metadata (config, hash)."""

    params: dict[str, np.ndarray]
    meta: dict
    adam: dict[str, np.ndarray] = field(default_factory=dict)

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"meta.json": _meta_tensor(self.meta)}
        out.update({f"param.{k}": v for k, v in self.params.items()})
        out.update(self.adam)
        return out

    def save(self, path) -> None:
        save_checkpoint(self.tensors(), path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        t = load_checkpoint(path)
        if "meta.json" not in t:
            raise CheckpointFormatError(f"{path}: missing meta.json record")
        params = {k[len("param."):]: v for k, v in t.items() if k.startswith("param.")}
        adam = {k: v for k, v in t.items() if k.startswith("adam.")}
        return cls(params, _meta_from_tensor(t["meta.json"]), adam)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.meta["model"])

    @property
    def config_hash(self) -> str:
        return self.meta["config_hash"]

    def model(self) -> IqaModel:
        cfg = self.model_config
        return IqaModel(cfg, {k: T.parameter(v.copy()) for k, v in self.params.items()})


# --- features ----------------------------------------------------------------

class FeatureStore:
    """In-memory feature maps keyed by image id (``<id>.siqf`` inside a directory)."""

    def __init__(self, maps: dict[str, np.ndarray], source: str = "toy"):
        self.maps = maps
        self.source = source

    @classmethod
    def from_dir(cls, manifest: Manifest, directory) -> "FeatureStore":
        directory = Path(directory)
        index = directory / "features.json"
        source = json.loads(index.read_text()).get("encoder", "import") if index.exists() else "import"
        source = "toy" if source == "toy" else "imported"
        ids = sorted({s.id for s in manifest.samples} | {s.ref_id for s in manifest.samples})
        maps = {}
        for i in ids:
            path = directory / f"{i}.siqf"
            if not path.exists():
                raise FileNotFoundError(f"missing feature file {path}")
            maps[i] = load_features(path, source=source).data
        return cls(maps, source)

    def shape(self) -> tuple[int, int, int]:
        return next(iter(self.maps.values())).shape

    def stack(self, ids: list[str]) -> np.ndarray:
        return np.stack([self.maps[i] for i in ids])


# --- training ----------------------------------------------------------------

@dataclass
class TrainConfig:
    task: str = "fr"
    distance: str = "l1"
    branches: str = "bf"
    epochs: int = 300
    batch: int = 16
    lr: float = 2e-5
    seed: int = 0
    augment: bool = True
    scales: int = 3
    pooled: int = 4

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def model_config(self, channels: int, extent: int) -> ModelConfig:
        sfem = SfemConfig(channels=channels, extent=extent, scales=self.scales, pooled=self.pooled,
                          branches=self.branches)
        return ModelConfig(task=self.task, distance=self.distance, sfem=sfem)

    def hash(self) -> str:
        return config_hash(asdict(self))


@dataclass
class FitResult:
    checkpoint: Checkpoint
    log: list[dict]
    model: IqaModel
    best_epoch: int


def _split_arrays(samples: list[Sample], store: FeatureStore, task: str):
    lq = store.stack([s.id for s in samples])
    hq = store.stack([s.ref_id for s in samples]) if task == "fr" else None
    y = np.array([s.label for s in samples])
    return lq, hq, y


def validation_srcc(model: IqaModel, lq, hq, y) -> float | None:
    try:
        return srcc(model.predict(lq, hq), y)
    except UndefinedMetric:
        return None


def fit(manifest: Manifest, store: FeatureStore, cfg: TrainConfig,
        on_epoch: Callable[[dict], None] | None = None) -> FitResult:
    """Train with seeded shuffling and flips, keep the best-validation-SRCC parameters."""
    train = manifest.split("train")
    val = manifest.split("val")
    if not train:
        raise TrainingError("empty train split")
    if not val:
        raise TrainingError("empty val split")
    c, h, w = store.shape()
    if h != w:
        raise TrainingError(f"feature maps must be square, got {h}×{w}")
    mcfg = cfg.model_config(c, h)
    model = IqaModel.init(mcfg, cfg.seed)
    opt = Adam(model.params, lr=cfg.lr)
    augment = cfg.augment and store.source == "toy"
    meta = {"model": mcfg.to_dict(), "train": asdict(cfg), "config_hash": cfg.hash(),
            "augment_effective": augment}

    tr_lq, tr_hq, tr_y = _split_arrays(train, store, cfg.task)
    va_lq, va_hq, va_y = _split_arrays(val, store, cfg.task)

    def snapshot(epoch: int) -> Checkpoint:
        m = dict(meta, epoch=epoch)
        return Checkpoint({k: p.data.copy() for k, p in model.params.items()}, m, opt.state_tensors())

    best = snapshot(0)
    best_srcc = -math.inf
    best_epoch = 0
    history: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, epoch]))
        flip_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, epoch]))
        order = order_rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(order), cfg.batch):
            idx = order[start:start + cfg.batch]
            lq = tr_lq[idx]
            hq = tr_hq[idx] if tr_hq is not None else None
            if augment:
                lq = lq.copy()
                hq = hq.copy() if hq is not None else None
                for j in range(len(idx)):
                    fh, fv = draw_flips(flip_rng)
                    lq[j] = apply_flips(lq[j], fh, fv)
                    if hq is not None:
                        hq[j] = apply_flips(hq[j], fh, fv)
            pred = model.forward(lq, hq)
            bad = ~np.isfinite(pred.data)
            if bad.any():
                sid = train[int(idx[int(np.argmax(bad))])].id
                raise TrainingError(f"non-finite prediction at epoch {epoch} for sample {sid}")
            loss = l1_loss(pred, tr_y[idx])
            if not math.isfinite(loss.item()):
                raise TrainingError(f"NaN loss at epoch {epoch}, batch starting with sample {train[int(idx[0])].id}")
            total += loss.item() * len(idx)
            loss.backward()
            opt.step()
        v = validation_srcc(model, va_lq, va_hq, va_y)
        rec = {"epoch": epoch, "train_loss": total / len(train), "val_srcc": v}
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        log.debug("epoch %d loss %.5f val srcc %s", epoch, rec["train_loss"], v)
        if v is not None and v > best_srcc:
            best_srcc = v
            best_epoch = epoch
            best = snapshot(epoch)
    if cfg.epochs == 0 or best_srcc == -math.inf:
        best = snapshot(cfg.epochs)
        best_epoch = cfg.epochs
    return FitResult(best, history, best.model(), best_epoch)
