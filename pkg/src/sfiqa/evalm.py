"""SRCC / PLCC criteria and the PSNR baseline."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np


class UndefinedMetric(ValueError):
    """Correlation is undefined (fewer than two points or zero variance)."""


def fractional_ranks(x: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise UndefinedMetric(f"need at least 2 points, got {len(a)}")
    da = a - a.mean()
    db = b - b.mean()
    va = float(np.dot(da, da))
    vb = float(np.dot(db, db))
    if va == 0.0 or vb == 0.0:
        raise UndefinedMetric("zero variance")
    # one sqrt of the product keeps r == 1 exact for identical rank vectors
    r = float(np.dot(da, db)) / math.sqrt(va * vb)
    return max(-1.0, min(1.0, r))


def srcc(pred: Sequence[float], label: Sequence[float]) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if len(pred) != len(label):
        raise ValueError(f"length mismatch: {len(pred)} vs {len(label)}")
    if len(pred) < 2:
        raise UndefinedMetric(f"need at least 2 points, got {len(pred)}")
    return _pearson(fractional_ranks(pred), fractional_ranks(label))


def logistic4(x, b1, b2, b3, b4):
    return (b1 - b2) / (1.0 + np.exp(-(x - b3) / np.abs(b4))) + b2


def fit_logistic(pred: np.ndarray, label: np.ndarray) -> np.ndarray:
    """Map predictions through a fitted monotone 4-parameter logistic."""
    from scipy.optimize import curve_fit

    p0 = [label.max(), label.min(), float(np.mean(pred)), float(np.std(pred)) or 1.0]
    try:
        params, _ = curve_fit(logistic4, pred, label, p0=p0, maxfev=20000)
    except RuntimeError:
        return pred
    return logistic4(pred, *params)


def plcc(pred: Sequence[float], label: Sequence[float], logistic: bool = False) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if logistic:
        if len(pred) < 2 or np.ptp(pred) == 0:
            raise UndefinedMetric("zero variance")
        pred = fit_logistic(pred, label)
    return _pearson(pred, label)


def psnr(ref: np.ndarray, dist: np.ndarray, peak: float = 1.0) -> float:
    ref = np.asarray(ref, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    if ref.shape != dist.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {dist.shape}")
    mse = float(np.mean((ref - dist) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def format_db(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"


def criteria(pred: Sequence[float], label: Sequence[float], logistic: bool = False) -> dict[str, float | None]:
    """SRCC and PLCC; an undefined criterion comes back as None instead of aborting."""
    out: dict[str, float | None] = {}
    for name, fn in (("srcc", lambda: srcc(pred, label)), ("plcc", lambda: plcc(pred, label, logistic))):
        try:
            out[name] = fn()
        except UndefinedMetric:
            out[name] = None
    return out


DATASET = "synthetic"


def _record(split: str, task: str, model: str, metric: str, value, cfg_hash: str, plcc_mode: str) -> dict:
    rec = {"dataset": DATASET, "split": split, "task": task, "model": model, "metric": metric,
           "value": value, "config_hash": cfg_hash}
    if metric == "plcc":
        rec["plcc_mode"] = plcc_mode
    if value is None:
        rec["error"] = "undefined (zero variance)"
    return rec


def evaluate_split(model, manifest, split: str, store, cfg_hash: str = "", logistic: bool = False,
                   psnr_baseline: bool = True) -> list[dict]:
    """Score every sample of ``split`` and return one report record per criterion.

    FR runs also get the PSNR baseline rows, computed from the stored images.
    """
    from .data import load_image

    samples = sorted(manifest.split(split), key=lambda s: s.id)
    if not samples:
        raise ValueError(f"split {split!r} is empty")
    task = model.cfg.task
    lq = store.stack([s.id for s in samples])
    hq = store.stack([s.ref_id for s in samples]) if task == "fr" else None
    labels = np.array([s.label for s in samples])
    mode = "logistic" if logistic else "raw"
    res = criteria(model.predict(lq, hq), labels, logistic)
    records = [_record(split, task, "sfiqa", m, res[m], cfg_hash, mode) for m in ("srcc", "plcc")]
    if task == "fr" and psnr_baseline:
        scores = np.array([psnr(load_image(manifest.path(s.ref)), load_image(manifest.path(s.dist)))
                           for s in samples])
        finite = np.isfinite(scores)
        if not finite.all():
            cap = scores[finite].max() + 1.0 if finite.any() else 100.0
            scores = np.where(finite, scores, cap)
        res = criteria(scores, labels, logistic)
        records += [_record(split, task, "psnr", m, res[m], cfg_hash, mode) for m in ("srcc", "plcc")]
    return records
