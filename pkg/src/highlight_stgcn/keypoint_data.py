"""Keypoint-track data model, track-file ingest and tensor assembly.

Tracks arrive as JSON documents produced by an external pose/face
detector + tracker. Everything downstream works on the dense
``N x T x P x D`` node tensor built here.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODALITIES = ("pose3d", "face2d")


class TrackParseError(ValueError):
    """Malformed track file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedVersionError(ValueError):
    pass


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModalityTopology:
    modality_id: str
    node_count: int
    spatial_dim: int
    intra_edges: tuple[tuple[int, int], ...]
    name: str = ""

    def __post_init__(self):
        if self.node_count <= 0:
            raise ValueError("node_count must be positive")
        if self.spatial_dim not in (2, 3):
            raise ValueError("spatial_dim must be 2 or 3")
        seen = set()
        for i, j in self.intra_edges:
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise ValueError(f"edge ({i}, {j}) out of range for N={self.node_count}")
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)

    def to_dict(self) -> dict:
        return {
            "modality_id": self.modality_id,
            "node_count": self.node_count,
            "spatial_dim": self.spatial_dim,
            "intra_edges": [list(e) for e in self.intra_edges],
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModalityTopology":
        return cls(
            modality_id=d["modality_id"],
            node_count=int(d["node_count"]),
            spatial_dim=int(d["spatial_dim"]),
            intra_edges=tuple((int(i), int(j)) for i, j in d["intra_edges"]),
            name=d.get("name", d["modality_id"]),
        )


def load_topology(path: str | Path) -> ModalityTopology:
    with open(path) as fh:
        return ModalityTopology.from_dict(json.load(fh))


# CMU Panoptic body19: neck, nose, body centre, left arm, left leg, right arm,
# right leg, eyes, ears.
_PANOPTIC19_EDGES = (
    (0, 1), (0, 3), (3, 4), (4, 5), (0, 2), (2, 6), (6, 7), (7, 8), (2, 12),
    (12, 13), (13, 14), (0, 9), (9, 10), (10, 11), (1, 15), (15, 16), (1, 17),
    (17, 18),
)


def _chain(start: int, stop: int, closed: bool = False) -> list[tuple[int, int]]:
    edges = [(i, i + 1) for i in range(start, stop - 1)]
    if closed:
        edges.append((stop - 1, start))
    return edges


def _face68_edges() -> tuple[tuple[int, int], ...]:
    edges = (
        _chain(0, 17)                  # chin
        + _chain(17, 22) + _chain(22, 27)  # brows
        + _chain(27, 31) + _chain(31, 36)  # nose bridge, nostrils
        + _chain(36, 42, closed=True) + _chain(42, 48, closed=True)  # eyes
        + _chain(48, 60, closed=True) + _chain(60, 68, closed=True)  # lips
        + [(30, 33), (21, 27), (22, 27)]  # tie groups together
    )
    return tuple(edges)


POSE3D = ModalityTopology("pose3d", 19, 3, _PANOPTIC19_EDGES, name="panoptic-body19")
FACE2D = ModalityTopology("face2d", 68, 2, _face68_edges(), name="face-landmarks-68")
DEFAULT_TOPOLOGIES = {"pose3d": POSE3D, "face2d": FACE2D}


@dataclass
class KeypointFrame:
    points: np.ndarray   # (N, D); zeros where not visible
    visible: np.ndarray  # (N,) bool


@dataclass
class PersonTrack:
    person_id: int
    frames: dict[int, dict[str, KeypointFrame]] = field(default_factory=dict)

    def frame_count(self, modality: str | None = None) -> int:
        if modality is None:
            return len(self.frames)
        return sum(1 for mods in self.frames.values() if modality in mods)


@dataclass
class VideoMeta:
    source_id: str
    fps: float
    frame_count: int
    skipped_modalities: int = 0


@dataclass
class VideoSegment:
    """Frames ``[start_frame, end_frame)`` of a video; track frame keys are segment-local."""

    source_id: str
    start_frame: int
    end_frame: int
    fps: float
    tracks: list[PersonTrack]

    @property
    def length(self) -> int:
        return self.end_frame - self.start_frame


@dataclass(frozen=True)
class ModalityTensor:
    modality_id: str
    data: np.ndarray              # (N, T, P, D)
    visible: np.ndarray           # (N, T, P) bool
    observed_mask: np.ndarray     # (T, P) bool
    frame_observable: np.ndarray  # (T,) bool

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape


def _offset_of(raw: bytes, needle: str) -> int | None:
    idx = raw.find(needle.encode())
    return idx if idx >= 0 else None


def parse_tracks(
    raw: bytes | str,
    topologies: Mapping[str, ModalityTopology] | None = None,
) -> tuple[list[PersonTrack], VideoMeta]:
    """Parse a schema-1 track file.

    Modalities not present in ``topologies`` are dropped and counted in
    ``VideoMeta.skipped_modalities``. Non-visible points are zeroed.
    """
    topologies = DEFAULT_TOPOLOGIES if topologies is None else topologies
    if isinstance(raw, str):
        raw = raw.encode()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TrackParseError("track file is not UTF-8", exc.start) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode())
        raise TrackParseError(f"malformed JSON: {exc.msg}", offset) from exc
    if not isinstance(doc, dict):
        raise TrackParseError("top level must be an object", 0)

    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise UnsupportedVersionError(f"unsupported track schema_version {version!r}")
    try:
        meta = VideoMeta(
            source_id=str(doc["source_id"]),
            fps=float(doc["fps"]),
            frame_count=int(doc["frame_count"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise TrackParseError(f"bad header: {exc}", 0) from exc
    if meta.fps <= 0 or meta.frame_count < 0:
        raise TrackParseError("fps must be positive and frame_count non-negative", 0)

    tracks = []
    skipped = 0
    for person in doc.get("persons", []):
        pid = int(person["person_id"])
        track = PersonTrack(pid)
        for key, mods in person.get("frames", {}).items():
            try:
                t = int(key, 10)
            except ValueError:
                raise TrackParseError(f"frame key {key!r} is not an integer", _offset_of(raw, f'"{key}"'))
            if not 0 <= t < meta.frame_count:
                raise TrackParseError(
                    f"frame index {t} outside [0, {meta.frame_count}) for person {pid}",
                    _offset_of(raw, f'"{key}"'),
                )
            entry = {}
            for mod, payload in mods.items():
                topo = topologies.get(mod)
                if topo is None:
                    skipped += 1
                    continue
                pts = np.asarray(payload["points"], dtype=np.float64)
                vis = np.asarray(payload.get("visible", [True] * len(pts)), dtype=bool)
                if pts.ndim != 2 or pts.shape != (topo.node_count, topo.spatial_dim) or vis.shape != (topo.node_count,):
                    raise ShapeError(
                        f"{mod} for person {pid} frame {t}: got points {pts.shape}, visible {vis.shape}, "
                        f"expected ({topo.node_count}, {topo.spatial_dim})"
                    )
                pts = np.where(vis[:, None], pts, 0.0)
                entry[mod] = KeypointFrame(pts, vis)
            if entry:
                track.frames[t] = entry
        tracks.append(track)
    if skipped:
        logger.warning("skipped %d entries of unknown modalities", skipped)
    meta.skipped_modalities = skipped
    return tracks, meta


def dump_tracks(tracks: Sequence[PersonTrack], meta: VideoMeta) -> str:
    """Inverse of :func:`parse_tracks`."""
    persons = []
    for tr in tracks:
        frames = {}
        for t in sorted(tr.frames):
            frames[str(t)] = {
                mod: {"points": kf.points.tolist(), "visible": kf.visible.tolist()}
                for mod, kf in tr.frames[t].items()
            }
        persons.append({"person_id": tr.person_id, "frames": frames})
    doc = {
        "schema_version": SCHEMA_VERSION,
        "source_id": meta.source_id,
        "fps": meta.fps,
        "frame_count": meta.frame_count,
        "persons": persons,
    }
    return json.dumps(doc)


def _axis_ranges(tracks: Iterable[PersonTrack], modality: str):
    stacks = [
        kf.points[kf.visible]
        for tr in tracks
        for mods in tr.frames.values()
        if (kf := mods.get(modality)) is not None and kf.visible.any()
    ]
    if not stacks:
        return None
    allpts = np.concatenate(stacks, axis=0)
    return allpts.min(axis=0), allpts.max(axis=0)


def normalize_coordinates(
    tracks: Sequence[PersonTrack],
    topologies: Mapping[str, ModalityTopology] | None = None,
) -> list[PersonTrack]:
    """Per-modality, per-axis min-max scaling of visible points to [-1, 1].

    Axes with zero range map to 0. Modalities with no visible point are left
    as they are (all zeros). Returns new track objects.
    """
    topologies = DEFAULT_TOPOLOGIES if topologies is None else topologies
    scalers = {}
    for mod in topologies:
        rng = _axis_ranges(tracks, mod)
        if rng is None:
            logger.info("modality %s absent from video", mod)
            continue
        lo, hi = rng
        span = hi - lo
        already = (lo == -1.0) & (hi == 1.0)
        scalers[mod] = (lo, span, already)

    out = []
    for tr in tracks:
        new = PersonTrack(tr.person_id)
        for t, mods in tr.frames.items():
            entry = {}
            for mod, kf in mods.items():
                if mod not in scalers:
                    entry[mod] = kf
                    continue
                lo, span, already = scalers[mod]
                safe = np.where(span > 0, span, 1.0)
                scaled = np.where(span > 0, 2.0 * (kf.points - lo) / safe - 1.0, 0.0)
                scaled = np.where(already, kf.points, scaled)
                scaled = np.where(kf.visible[:, None], scaled, 0.0)
                entry[mod] = KeypointFrame(scaled, kf.visible.copy())
            new.frames[t] = entry
        out.append(new)
    return out


def select_persons(tracks: Sequence[PersonTrack], p_max: int) -> list[PersonTrack]:
    """Keep at most ``p_max`` tracks: most observed frames first, lower id on ties.

    The result is ordered by person id, which fixes each person's slot.
    """
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    ranked = sorted(tracks, key=lambda tr: (-tr.frame_count(), tr.person_id))
    return sorted(ranked[:p_max], key=lambda tr: tr.person_id)


def segment_video(
    tracks: Sequence[PersonTrack],
    meta: VideoMeta,
    seconds: float = 30.0,
    f: float = 5.0,
) -> list[VideoSegment]:
    """Cut a video into contiguous non-overlapping windows of ceil(seconds*f) frames.

    The last window may be shorter. Persons with no frame inside a window are
    left out of that window.
    """
    if seconds <= 0 or f <= 0:
        raise ValueError("seconds and f must be positive")
    win = math.ceil(seconds * f)
    segments = []
    for start in range(0, meta.frame_count, win):
        end = min(start + win, meta.frame_count)
        local = []
        for tr in tracks:
            frames = {t - start: mods for t, mods in tr.frames.items() if start <= t < end}
            if frames:
                local.append(PersonTrack(tr.person_id, frames))
        segments.append(VideoSegment(meta.source_id, start, end, f, local))
    return segments


def build_modality_tensor(
    segment: VideoSegment,
    topology: ModalityTopology,
    T: int,
    P: int,
) -> ModalityTensor:
    """Collate one modality of a segment into a zero-padded ``N x T x P x D`` tensor.

    ``segment.tracks`` must already be capped to ``P`` persons; track order
    gives the person slot.
    """
    if T < segment.length:
        raise ValueError(f"T={T} shorter than segment length {segment.length}")
    if P < 1:
        raise ValueError("P must be >= 1")
    if len(segment.tracks) > P:
        raise RuntimeError(
            f"{len(segment.tracks)} persons exceed P={P}; select_persons must run first"
        )
    N, D = topology.node_count, topology.spatial_dim
    data = np.zeros((N, T, P, D))
    visible = np.zeros((N, T, P), dtype=bool)
    for p, tr in enumerate(segment.tracks):
        for t, mods in tr.frames.items():
            kf = mods.get(topology.modality_id)
            if kf is None:
                continue
            visible[:, t, p] = kf.visible
            data[:, t, p, :] = np.where(kf.visible[:, None], kf.points, 0.0)
    observed = visible.sum(axis=0) * 2 > N
    return ModalityTensor(
        modality_id=topology.modality_id,
        data=data,
        visible=visible,
        observed_mask=observed,
        frame_observable=observed.any(axis=1),
    )


def observability_weight(tensor: ModalityTensor) -> float:
    """Fraction of the tensor's T frames in which the modality is observable."""
    fo = tensor.frame_observable
    if fo.size == 0:
        raise ValueError("tensor has no frames")
    return float(np.count_nonzero(fo)) / fo.size


def video_segments(
    tracks: Sequence[PersonTrack],
    meta: VideoMeta,
    seconds: float = 30.0,
    f: float = 5.0,
    P: int = 20,
    topologies: Mapping[str, ModalityTopology] | None = None,
) -> list[VideoSegment]:
    """Normalize, segment and cap persons per segment: the ingest pipeline."""
    scaled = normalize_coordinates(tracks, topologies)
    segments = segment_video(scaled, meta, seconds, f)
    for seg in segments:
        seg.tracks = select_persons(seg.tracks, P) if seg.tracks else []
    return segments
