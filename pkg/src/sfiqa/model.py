"""FR/NR quality models: SFEM + distance + regression head over one parameter dict."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tensor as T
from .distance import distance, distance_width
from .heads import frrb_forward, init_frrb, init_nrrb, nrrb_forward
from .sfem import SfemConfig, init_sfem, sfem_forward
from .tensor import Tensor

TASKS = ("fr", "nr")


@dataclass(frozen=True)
class ModelConfig:
    task: str = "fr"
    distance: str = "l1"
    sfem: SfemConfig = SfemConfig()

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        distance_width(self.distance, 1, 1)

    def to_dict(self) -> dict:
        return {"task": self.task, "distance": self.distance, "sfem": asdict(self.sfem)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(task=d["task"], distance=d["distance"], sfem=SfemConfig(**d["sfem"]))

    def with_branches(self, branches: str) -> "ModelConfig":
        return replace(self, sfem=replace(self.sfem, branches=branches))


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


class IqaModel:
    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int) -> "IqaModel":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5FE3]))
        params = init_sfem(cfg.sfem, rng)
        c_out = cfg.sfem.out_channels
        s = cfg.sfem
        if cfg.task == "fr":
            width = distance_width(cfg.distance, c_out, s.pooled)
            params.update(init_frrb(width if s.use_spatial else None, width if s.use_frequency else None, rng))
        else:
            params.update(init_nrrb(c_out if s.use_spatial else None, c_out if s.use_frequency else None, rng))
        return cls(cfg, params)

    def forward(self, lq: np.ndarray, hq: np.ndarray | None = None) -> Tensor:
        """Scores for a batch: ``lq`` (and ``hq`` for FR) are N×C×H×W feature arrays."""
        if self.cfg.task == "fr":
            if hq is None:
                raise ValueError("FR forward needs reference features")
            n = lq.shape[0]
            out = sfem_forward(Tensor(np.concatenate([lq, hq], axis=0)), self.params, self.cfg.sfem)
            d = []
            for branch in out:
                if branch is None:
                    d.append(None)
                    continue
                a = T.index_range(branch, 0, n, 0)
                b = T.index_range(branch, n, 2 * n, 0)
                d.append(distance(self.cfg.distance, a, b))
            return frrb_forward(d[0], d[1], self.params)
        out = sfem_forward(Tensor(lq), self.params, self.cfg.sfem)
        return nrrb_forward(out.spatial, out.frequency, self.params)

    def predict(self, lq: np.ndarray, hq: np.ndarray | None = None, batch: int = 64) -> np.ndarray:
        preds = []
        with T.no_grad():
            for i in range(0, lq.shape[0], batch):
                h = None if hq is None else hq[i:i + batch]
                preds.append(self.forward(lq[i:i + batch], h).data.copy())
        return np.concatenate(preds) if preds else np.zeros(0)
