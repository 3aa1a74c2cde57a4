"""Frame-level highlight metrics and the representativeness diagnostic."""
from __future__ import annotations

import contextlib
import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numeric import smooth_l1_values

logger = logging.getLogger(__name__)


class UndefinedMetricError(ValueError):
    """Raised for a video without any positive frame."""


class AlignmentError(ValueError):
    pass


@dataclass
class Annotation:
    source_id: str
    positive_frames: np.ndarray  # bool, one entry per frame at the processing rate

    @classmethod
    def from_intervals(cls, source_id: str, intervals: Iterable[Sequence[int]], length: int) -> "Annotation":
        mask = np.zeros(length, dtype=bool)
        for start, end in intervals:
            if start < 0 or end >= length or start > end:
                raise AlignmentError(f"{source_id}: interval [{start}, {end}] outside [0, {length})")
            mask[start:end + 1] = True
        return cls(source_id, mask)


def load_annotation(path: str | Path, length: int) -> Annotation:
    with open(path) as fh:
        d = json.load(fh)
    return Annotation.from_intervals(d["source_id"], d["positive_intervals"], length)


def _check(scores, positives):
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape or scores.ndim != 1:
        raise AlignmentError(f"score curve {scores.shape} and annotation {positives.shape} differ")
    if not positives.any():
        raise UndefinedMetricError("no positive frames")
    return scores, positives


def ranking(scores: np.ndarray) -> np.ndarray:
    """Frame indices by descending score; equal scores keep frame order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def average_precision(scores, positives, retrieved=None) -> float:
    """Mean, over positive frames, of the precision at that frame's rank.

    With a ``retrieved`` mask, only retrieved frames are ranked and a
    positive that is not retrieved contributes zero.
    """
    scores, positives = _check(scores, positives)
    order = ranking(scores)
    if retrieved is not None:
        retrieved = np.asarray(retrieved, dtype=bool)
        order = order[retrieved[order]]
    hits = positives[order]
    precision = np.cumsum(hits) / np.arange(1, len(order) + 1)
    return float(precision[hits].sum() / positives.sum())


def mean_ap(pairs: Iterable[tuple[np.ndarray, np.ndarray]]) -> float:
    """Unweighted mean AP; videos with no positive frame are skipped."""
    aps = []
    for i, (scores, positives) in enumerate(pairs):
        try:
            aps.append(average_precision(scores, positives))
        except UndefinedMetricError:
            logger.warning("video %d has no positive frames; skipped", i)
    if not aps:
        raise UndefinedMetricError("no evaluable video")
    return float(np.mean(aps))


def f_score(predicted, positives) -> float:
    """Frame-level F1 of a boolean prediction; 0 when precision + recall is 0."""
    predicted = np.asarray(predicted, dtype=bool)
    _, positives = _check(predicted.astype(float), positives)
    tp = np.count_nonzero(predicted & positives)
    if tp == 0:
        return 0.0
    p = tp / np.count_nonzero(predicted)
    r = tp / np.count_nonzero(positives)
    return 2 * p * r / (p + r)


def f_score_at(scores, positives, h_thres: float) -> float:
    return f_score(np.asarray(scores) >= h_thres, positives)


def representativeness(x: np.ndarray, h: np.ndarray, beta: float = 1.0) -> float:
    """Smooth-l1 size of what is lost when frame t of ``x`` (``N x T x ...``) is scaled by ``h[t]``."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    if h.shape[0] != x.shape[1]:
        raise AlignmentError(f"{h.shape[0]} scores for {x.shape[1]} frames")
    if (h < 0).any() or (h > 1).any():
        raise ValueError("scores must lie in [0, 1]")
    shape = [1] * x.ndim
    shape[1] = -1
    return float(smooth_l1_values(x - h.reshape(shape) * x, beta).sum())


def _sink(target):
    """Open a path for CSV writing, or pass an open text stream through."""
    if hasattr(target, "write"):
        return contextlib.nullcontext(target)
    return open(target, "w", newline="")


REPORT_COLUMNS = ("source_id", "AP", "F", "positives", "predicted_frames")


@dataclass
class VideoResult:
    source_id: str
    ap: float | None
    f: float | None
    positives: int
    predicted_frames: int


def evaluate_video(source_id: str, scores, positives, h_thres: float) -> VideoResult:
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    pred = scores >= h_thres
    try:
        ap = average_precision(scores, positives)
        f = f_score(pred, positives)
    except UndefinedMetricError:
        logger.warning("%s has no positive frames; skipped", source_id)
        ap = f = None
    return VideoResult(source_id, ap, f, int(positives.sum()), int(pred.sum()))


def write_report(results: Sequence[VideoResult], path: str | Path, header: dict | None = None) -> dict:
    """Per-video CSV plus a final ``MEAN`` row; returns the aggregate."""
    scored = [r for r in results if r.ap is not None]
    agg = {
        "mAP": float(np.mean([r.ap for r in scored])) if scored else None,
        "mean_F": float(np.mean([r.f for r in scored])) if scored else None,
        "evaluated": len(scored),
        "skipped": len(results) - len(scored),
    }
    with _sink(path) as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in results:
            w.writerow([r.source_id, "" if r.ap is None else f"{r.ap:.6f}",
                        "" if r.f is None else f"{r.f:.6f}", r.positives, r.predicted_frames])
        w.writerow(["MEAN", "" if agg["mAP"] is None else f"{agg['mAP']:.6f}",
                    "" if agg["mean_F"] is None else f"{agg['mean_F']:.6f}",
                    sum(r.positives for r in results), sum(r.predicted_frames for r in results)])
    return agg
