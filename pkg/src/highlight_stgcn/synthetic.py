"""Seeded synthetic keypoint videos with one planted highlight segment.

Background frames repeat a low-amplitude periodic motion around a rest
pose; inside the planted segment every person follows a distinct,
high-amplitude smooth trajectory. The annotation marks exactly the planted
frames.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .keypoint_data import (
    DEFAULT_TOPOLOGIES,
    KeypointFrame,
    ModalityTopology,
    PersonTrack,
    VideoMeta,
)


@dataclass
class SyntheticVideo:
    tracks: list[PersonTrack]
    meta: VideoMeta
    planted: tuple[int, int]  # inclusive frame range

    @property
    def positives(self) -> np.ndarray:
        mask = np.zeros(self.meta.frame_count, dtype=bool)
        mask[self.planted[0]:self.planted[1] + 1] = True
        return mask

    def annotation_dict(self) -> dict:
        return {
            "source_id": self.meta.source_id,
            "fps": self.meta.fps,
            "positive_intervals": [list(self.planted)],
        }

    def annotation_json(self) -> str:
        return json.dumps(self.annotation_dict())


def _rest_pose(topology: ModalityTopology, rng: np.random.Generator, bone: float) -> np.ndarray:
    """A rest configuration where connected nodes sit near each other."""
    N, D = topology.node_count, topology.spatial_dim
    pts = np.zeros((N, D))
    placed = {0}
    adj = {i: [] for i in range(N)}
    for i, j in topology.intra_edges:
        adj[i].append(j)
        adj[j].append(i)
    frontier = [0]
    while frontier:
        i = frontier.pop(0)
        for j in adj[i]:
            if j not in placed:
                pts[j] = pts[i] + rng.normal(0, bone, D)
                placed.add(j)
                frontier.append(j)
    for j in range(N):
        if j not in placed:
            pts[j] = rng.normal(0, 2 * bone, D)
    return pts


def _smooth_path(rng: np.random.Generator, length: int, shape: tuple, amplitude: float) -> np.ndarray:
    """Sum of a few random low-frequency sinusoids per coordinate."""
    t = np.arange(length)[:, None, None]
    out = np.zeros((length,) + shape)
    for _ in range(3):
        freq = rng.uniform(0.5, 2.0) / length
        phase = rng.uniform(0, 2 * np.pi, shape)
        out += np.sin(2 * np.pi * freq * t + phase)
    return amplitude * out / 3.0


def generate_video(
    seed: int,
    T: int = 150,
    planted_len: int = 30,
    persons: int = 2,
    modalities: tuple[str, ...] = ("pose3d", "face2d"),
    fps: float = 5.0,
    background_amplitude: float = 0.01,
    planted_amplitude: dict | float = 1.0,
    bone_length: float = 0.01,
    person_spacing: float = 0.05,
    articulation: float = 0.2,
    face_visible_fraction: float = 1.0,
    topologies: dict[str, ModalityTopology] | None = None,
) -> SyntheticVideo:
    """Generate one video.

    ``planted_amplitude`` may be a per-modality dict; ``face_visible_fraction``
    below 1 hides face landmarks in random contiguous blocks of frames
    (a pose-dominant video).
    """
    topologies = DEFAULT_TOPOLOGIES if topologies is None else topologies
    if not 0 < planted_len <= T:
        raise ValueError("planted_len must lie in (0, T]")
    rng = np.random.default_rng(seed)
    start = int(rng.integers(0, T - planted_len + 1))
    planted = (start, start + planted_len - 1)
    amp = planted_amplitude if isinstance(planted_amplitude, dict) else {m: planted_amplitude for m in modalities}

    face_hidden = np.zeros(T, dtype=bool)
    if face_visible_fraction < 1.0:
        n_hide = int(round((1.0 - face_visible_fraction) * T))
        block = max(1, T // 10)
        while face_hidden.sum() < n_hide:
            s = int(rng.integers(0, T))
            face_hidden[s:s + block] = True
            if face_hidden.sum() > n_hide:
                over = np.flatnonzero(face_hidden)[n_hide:]
                face_hidden[over] = False

    tracks = [PersonTrack(pid) for pid in range(persons)]
    for mod in modalities:
        topo = topologies[mod]
        N, D = topo.node_count, topo.spatial_dim
        for p, tr in enumerate(tracks):
            rest = _rest_pose(topo, rng, bone_length)
            rest[:, 0] += person_spacing * p  # persons side by side
            period = rng.uniform(8, 16)
            phase = rng.uniform(0, 2 * np.pi, (N, D))
            t = np.arange(T)[:, None, None]
            coords = rest[None] + background_amplitude * np.sin(2 * np.pi * t / period + phase)
            a = amp.get(mod, 0.0)
            body = _smooth_path(rng, planted_len, (1, D), a)
            limbs = _smooth_path(rng, planted_len, (N, D), articulation * a)
            coords[start:start + planted_len] += body + limbs
            for f in range(T):
                visible = np.ones(N, dtype=bool)
                if mod == "face2d" and face_hidden[f]:
                    visible[:] = False
                entry = tr.frames.setdefault(f, {})
                entry[mod] = KeypointFrame(np.where(visible[:, None], coords[f], 0.0), visible)
    meta = VideoMeta(source_id=f"synthetic-{seed}", fps=fps, frame_count=T)
    return SyntheticVideo(tracks, meta, planted)
