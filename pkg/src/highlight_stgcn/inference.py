"""Test-time scoring of whole videos and stitching of ranked excerpts."""
from __future__ import annotations

import contextlib
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import TrainConfig
from .evaluation import AlignmentError, average_precision
from .graph import factorized_adjacency
from .keypoint_data import (
    DEFAULT_TOPOLOGIES,
    ModalityTopology,
    PersonTrack,
    VideoMeta,
    VideoSegment,
    observability_weight,
    video_segments,
)
from .model import ModelParams, forward
from .training import frame_scores, segment_tensors

logger = logging.getLogger(__name__)


@dataclass
class FrameScoreCurve:
    """Combined per-frame score, the modality sum divided by the modality count."""

    scores: np.ndarray
    per_modality: dict[str, np.ndarray] = field(default_factory=dict)
    f: float = 5.0
    source_id: str = ""
    unobservable: bool = False  # set when no modality was observable anywhere

    def __len__(self) -> int:
        return len(self.scores)


@dataclass
class Excerpt:
    start_frame: int
    end_frame: int  # inclusive
    score: float
    rank: int = 0

    @property
    def length(self) -> int:
        return self.end_frame - self.start_frame + 1

    def to_dict(self, f: float) -> dict:
        return {
            "start_frame": self.start_frame,
            "end_frame": self.end_frame,
            "start_sec": self.start_frame / f,
            "end_sec": (self.end_frame + 1) / f,
            "score": self.score,
            "rank": self.rank,
        }


def score_segment(
    segment: VideoSegment,
    params: Mapping[str, ModelParams],
    config: TrainConfig,
    topologies: Mapping[str, ModalityTopology] | None = None,
) -> dict[str, np.ndarray]:
    """Weighted per-frame scores of each modality over the segment's real frames."""
    topologies = DEFAULT_TOPOLOGIES if topologies is None else topologies
    length = segment.length
    T = max(config.T, length)
    out = {}
    for mod, mt in segment_tensors(segment, config, topologies, T=T).items():
        # alpha over the padded window, as in training
        alpha = observability_weight(mt)
        if alpha == 0.0:
            out[mod] = np.zeros(length)
            continue
        adj = factorized_adjacency(topologies[mod], T, config.P, config.half_window)
        h = forward(mt.data, adj, params[mod]).h
        out[mod] = alpha * frame_scores(h).value[:length]
    return out


def score_segments(
    segments: Sequence[VideoSegment],
    params: Mapping[str, ModelParams],
    config: TrainConfig,
    topologies: Mapping[str, ModalityTopology] | None = None,
    source_id: str = "",
) -> FrameScoreCurve:
    per = {m: [] for m in config.modalities}
    for seg in segments:
        for m, s in score_segment(seg, params, config, topologies).items():
            per[m].append(s)
    per_mod = {m: np.concatenate(v) if v else np.zeros(0) for m, v in per.items()}
    combined = sum(per_mod.values()) / len(per_mod)
    unobservable = not any(np.any(v > 0) for v in per_mod.values())
    if unobservable:
        logger.warning("%s: no modality observable; scores are all zero", source_id or "video")
    return FrameScoreCurve(np.asarray(combined, dtype=np.float64), per_mod, config.f, source_id, unobservable)


def score_video(
    tracks: Sequence[PersonTrack],
    meta: VideoMeta,
    params: Mapping[str, ModelParams],
    config: TrainConfig,
    topologies: Mapping[str, ModalityTopology] | None = None,
) -> FrameScoreCurve:
    """Score every window of the video independently and concatenate the curves."""
    topologies = DEFAULT_TOPOLOGIES if topologies is None else topologies
    segments = video_segments(tracks, meta, config.segment_seconds, config.f, config.P, topologies)
    return score_segments(segments, params, config, topologies, meta.source_id)


def stitch_excerpts(curve, h_thres: float) -> list[Excerpt]:
    """Maximal runs of frames scoring at least ``h_thres``, best mean first."""
    if not 0.0 <= h_thres <= 1.0:
        raise ValueError(f"h_thres must lie in [0, 1], got {h_thres}")
    scores = np.asarray(getattr(curve, "scores", curve), dtype=np.float64)
    above = np.concatenate([[False], scores >= h_thres, [False]])
    edges = np.flatnonzero(np.diff(above.astype(np.int8)))
    runs = [Excerpt(int(s), int(e - 1), float(scores[s:e].mean())) for s, e in zip(edges[::2], edges[1::2])]
    runs.sort(key=lambda x: (-x.score, x.start_frame))
    for i, ex in enumerate(runs):
        ex.rank = i + 1
    return runs


def excerpt_mask(excerpts: Sequence[Excerpt], length: int) -> np.ndarray:
    mask = np.zeros(length, dtype=bool)
    for ex in excerpts:
        mask[ex.start_frame:ex.end_frame + 1] = True
    return mask


def _sink(target):
    """Open a path for CSV writing, or pass an open text stream through."""
    if hasattr(target, "write"):
        return contextlib.nullcontext(target)
    return open(target, "w", newline="")


SWEEP_COLUMNS = ("h_thres", "AP", "excerpt_count")


def threshold_sweep(curve, positives, thresholds: Sequence[float]) -> list[tuple[float, float, int]]:
    """AP of the frames kept by each threshold; frames left out count as missed."""
    scores = np.asarray(getattr(curve, "scores", curve), dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape:
        raise AlignmentError(f"curve has {scores.shape[0]} frames, annotation {positives.shape[0]}")
    rows = []
    for thr in thresholds:
        ex = stitch_excerpts(scores, thr)
        ap = average_precision(scores, positives, retrieved=excerpt_mask(ex, len(scores)))
        rows.append((float(thr), ap, len(ex)))
    return rows


def write_sweep_csv(rows, path: str | Path, header: dict | None = None) -> None:
    with _sink(path) as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for thr, ap, n in rows:
            w.writerow([f"{thr:g}", f"{ap:.6f}", n])


def excerpts_document(curve: FrameScoreCurve, excerpts: Sequence[Excerpt], h_thres: float,
                      config_digest: str = "") -> dict:
    return {
        "source_id": curve.source_id,
        "f": curve.f,
        "h_thres": h_thres,
        "score_normalization": "sum over modalities divided by modality count",
        "config_digest": config_digest,
        "warning": "no observable modality" if curve.unobservable else None,
        "curve": [float(s) for s in curve.scores],
        "excerpts": [e.to_dict(curve.f) for e in excerpts],
    }


def write_excerpts_json(doc: dict, path: str | Path | None = None) -> str:
    text = json.dumps(doc, indent=1)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text
