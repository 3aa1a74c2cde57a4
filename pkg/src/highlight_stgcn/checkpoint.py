"""Checkpoint files: one JSON header line, then raw little-endian payloads.

The header carries ``schema_version``, per-modality topology digests and
architectures, the training hyperparameters, a tensor manifest
(name, dtype, shape, byte offset) and a SHA-256 of the payload. Model
tensors are stored as ``<f4``; optimizer moments as ``<f8`` so a resumed
run continues exactly.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .keypoint_data import ModalityTopology
from .model import ModelParams, StgcnLayerParams
from .numeric import AdamState

CHECKPOINT_SCHEMA = 1


class CheckpointError(ValueError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, ModelParams]
    state: AdamState | None
    header: dict


def save_checkpoint(
    path: str | Path,
    params: Mapping[str, ModelParams],
    state: AdamState | None = None,
    topologies: Mapping[str, ModalityTopology] | None = None,
    hyperparameters: dict | None = None,
    extra: dict | None = None,
) -> None:
    tensors: list[tuple[str, np.ndarray]] = []
    for mod, mp in params.items():
        for name, arr in mp.named_tensors().items():
            tensors.append((f"{mod}/{name}", np.asarray(arr, dtype="<f4")))
    opt = None
    if state is not None:
        opt = {k: getattr(state, k) for k in ("lr", "beta1", "beta2", "eps", "weight_decay", "step")}
        for key in sorted(state.m):
            tensors.append((f"adam.m/{key}", np.asarray(state.m[key], dtype="<f8")))
            tensors.append((f"adam.v/{key}", np.asarray(state.v[key], dtype="<f8")))

    manifest, chunks, offset = [], [], 0
    for name, arr in tensors:
        raw = np.ascontiguousarray(arr).tobytes()
        manifest.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "schema_version": CHECKPOINT_SCHEMA,
        "topology_digests": {m: t.digest() for m, t in (topologies or {}).items() if m in params},
        "architectures": {m: mp.architecture() for m, mp in params.items()},
        "hyperparameters": hyperparameters or {},
        "optimizer": opt,
        "tensors": manifest,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    if extra:
        header.update(extra)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)
    os.replace(tmp, path)


def _rebuild(mod: str, arch: dict, tensors: dict[str, np.ndarray]) -> ModelParams:
    layers = {}
    for prefix, _, _, act in arch["layers"]:
        layers[prefix] = StgcnLayerParams(tensors[f"{mod}/{prefix}.W"], tensors[f"{mod}/{prefix}.b"], act)
    def stack(kind):
        return [layers[k] for k in sorted((k for k in layers if k.startswith(kind)), key=lambda s: int(s[3:]))]

    enc, dec = stack("enc"), stack("dec")
    return ModelParams(mod, enc, layers["hlt"], dec)


def load_checkpoint(
    path: str | Path,
    topologies: Mapping[str, ModalityTopology] | None = None,
) -> Checkpoint:
    """Read and verify a checkpoint.

    With ``topologies`` given, every stored modality's topology digest must
    match; otherwise :class:`CheckpointMismatchError` lists the differences.
    """
    blob = Path(path).read_bytes()
    nl = blob.find(b"\n")
    if nl < 0:
        raise CheckpointCorruptError("missing header terminator")
    try:
        header = json.loads(blob[:nl].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"unreadable header: {exc}") from exc
    if header.get("schema_version") != CHECKPOINT_SCHEMA:
        raise CheckpointVersionError(f"unsupported checkpoint schema_version {header.get('schema_version')!r}")
    payload = blob[nl + 1:]
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointCorruptError(
            f"payload is {len(payload)} bytes, header says {header.get('payload_bytes')}"
        )
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointCorruptError("payload checksum mismatch")

    if topologies is not None:
        stored = header.get("topology_digests", {})
        diffs = []
        for mod in header["architectures"]:
            want = topologies[mod].digest() if mod in topologies else None
            if stored.get(mod) != want:
                diffs.append(f"{mod}: checkpoint {stored.get(mod)} vs configured {want}")
        if diffs:
            raise CheckpointMismatchError("topology digest mismatch:\n  " + "\n  ".join(diffs))

    tensors = {}
    for entry in header["tensors"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype=dt, count=count, offset=entry["offset"])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(dt.newbyteorder("="))

    params = {m: _rebuild(m, arch, tensors) for m, arch in header["architectures"].items()}
    state = None
    if header.get("optimizer") is not None:
        state = AdamState(**header["optimizer"])
        for name, arr in tensors.items():
            if name.startswith("adam.m/"):
                state.m[name[7:]] = arr
            elif name.startswith("adam.v/"):
                state.v[name[7:]] = arr
    return Checkpoint(params, state, header)
