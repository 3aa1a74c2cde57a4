"""Spatial and temporal adjacency operators for the keypoint graphs.

The joint graph over all N*T*P nodes is never built. It factorizes into a
per-frame spatial operator over the N*P (person-major: index ``p*N + n``)
nodes of one frame, and a banded temporal operator over the T frames of a
single node track.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .keypoint_data import ModalityTopology


def default_half_window(f: float, window_seconds: float = 30.0) -> int:
    """Half of a ``window_seconds * f`` frame temporal window split past/future."""
    return math.floor(window_seconds * f / 2)


def build_spatial_adjacency(topology: ModalityTopology, P: int) -> np.ndarray:
    """Unnormalized 0/1 adjacency with intra-person and inter-person edges."""
    if P < 1:
        raise ValueError("P must be >= 1")
    N = topology.node_count
    A = np.zeros((N * P, N * P))
    block = np.zeros((N, N))
    for i, j in topology.intra_edges:
        block[i, j] = block[j, i] = 1.0
    for p in range(P):
        A[p * N:(p + 1) * N, p * N:(p + 1) * N] = block
    # identical node of every pair of persons
    eye = np.eye(N)
    for p in range(P):
        for q in range(p + 1, P):
            A[p * N:(p + 1) * N, q * N:(q + 1) * N] = eye
            A[q * N:(q + 1) * N, p * N:(p + 1) * N] = eye
    return A


def build_temporal_adjacency(T: int, w_h: int) -> np.ndarray:
    """Banded 0/1 adjacency: frames t, t' linked iff 0 < |t - t'| <= w_h."""
    if T < 1 or w_h < 0:
        raise ValueError("need T >= 1 and w_h >= 0")
    idx = np.arange(T)
    gap = np.abs(idx[:, None] - idx[None, :])
    return ((gap > 0) & (gap <= w_h)).astype(np.float64)


def normalize_adjacency(A: np.ndarray) -> np.ndarray:
    """Symmetric normalization with self-loops, ``D^-1/2 (A + I) D^-1/2``."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"adjacency must be square, got {A.shape}")
    if not np.array_equal(A, A.T):
        raise ValueError("adjacency must be symmetric")
    if (A < 0).any() or np.diag(A).any():
        raise ValueError("adjacency must be non-negative with zero diagonal")
    Ah = A + np.eye(A.shape[0])
    dinv = 1.0 / np.sqrt(Ah.sum(axis=1))
    return dinv[:, None] * Ah * dinv[None, :]


def edge_count(A: np.ndarray) -> int:
    """Undirected edges of a symmetric 0/1 matrix, self-loops excluded."""
    off = A.copy()
    np.fill_diagonal(off, 0)
    return int(np.count_nonzero(off)) // 2


@dataclass(frozen=True)
class FactorizedAdjacency:
    spatial: np.ndarray   # (N*P, N*P), normalized
    temporal: np.ndarray  # (T, T), normalized
    w_h: int

    @property
    def num_nodes(self) -> int:
        return self.spatial.shape[0]

    @property
    def num_frames(self) -> int:
        return self.temporal.shape[0]


@lru_cache(maxsize=64)
def _normalized_temporal(T: int, w_h: int) -> np.ndarray:
    out = normalize_adjacency(build_temporal_adjacency(T, w_h))
    out.flags.writeable = False
    return out


@lru_cache(maxsize=64)
def _normalized_spatial(topology: ModalityTopology, P: int) -> np.ndarray:
    out = normalize_adjacency(build_spatial_adjacency(topology, P))
    out.flags.writeable = False
    return out


def factorized_adjacency(topology: ModalityTopology, T: int, P: int, w_h: int) -> FactorizedAdjacency:
    return FactorizedAdjacency(_normalized_spatial(topology, P), _normalized_temporal(T, w_h), w_h)


def dump_triplets(A: np.ndarray, path: str | Path) -> None:
    """Write nonzero entries as ``row col value`` lines."""
    rows, cols = np.nonzero(A)
    with open(path, "w") as fh:
        for r, c in zip(rows, cols):
            fh.write(f"{r} {c} {A[r, c]:.17g}\n")
