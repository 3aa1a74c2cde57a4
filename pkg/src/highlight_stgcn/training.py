"""Weighted per-frame scores, the training objective and the optimization loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import numeric as nm
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .graph import factorized_adjacency
from .keypoint_data import (
    DEFAULT_TOPOLOGIES,
    ModalityTensor,
    ModalityTopology,
    VideoSegment,
    build_modality_tensor,
    observability_weight,
)
from .model import ModelParams, forward, init_params

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("epoch", "batch", "recon", "score", "reg", "total", "lr")


class TrainingDiverged(RuntimeError):
    def __init__(self, message, params=None, history=None):
        super().__init__(message)
        self.params = params
        self.history = history


def frame_scores(h) -> nm.Var:
    """Per-frame maximum of node scores over nodes and persons: ``N x T x P x 1 -> (T,)``."""
    if not isinstance(h, nm.Var):
        h = nm.Tape().const(h)
    T = h.shape[1]
    return nm.reshape(nm.max_reduce(h, axes=(0, 2, 3)), (T,))


def weighted_scores(h_max, alpha: float) -> nm.Var:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if not isinstance(h_max, nm.Var):
        h_max = nm.Tape().const(h_max)
    return nm.scale(h_max, alpha)


@dataclass
class LossBreakdown:
    recon: dict[str, float] = field(default_factory=dict)
    score: dict[str, float] = field(default_factory=dict)
    reg: dict[str, float] = field(default_factory=dict)
    total: float = 0.0
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def recon_total(self) -> float:
        return sum(self.recon.values())

    @property
    def score_total(self) -> float:
        return sum(self.score.values())

    @property
    def reg_total(self) -> float:
        return sum(self.reg.values())


def pad_tensor(mt: ModalityTensor, T: int) -> ModalityTensor:
    extra = T - mt.data.shape[1]
    if extra < 0:
        raise ValueError("cannot pad to a shorter length")
    if extra == 0:
        return mt
    return ModalityTensor(
        mt.modality_id,
        np.pad(mt.data, ((0, 0), (0, extra), (0, 0), (0, 0))),
        np.pad(mt.visible, ((0, 0), (0, extra), (0, 0))),
        np.pad(mt.observed_mask, ((0, extra), (0, 0))),
        np.pad(mt.frame_observable, (0, extra)),
    )


def segment_tensors(
    segment: VideoSegment,
    config: TrainConfig,
    topologies: Mapping[str, ModalityTopology],
    T: int | None = None,
) -> dict[str, ModalityTensor]:
    T = segment.length if T is None else T
    return {m: build_modality_tensor(segment, topologies[m], T, config.P) for m in config.modalities}


def compute_loss(
    batch: Sequence[Mapping[str, ModalityTensor]],
    params: Mapping[str, ModelParams],
    config: TrainConfig,
    topologies: Mapping[str, ModalityTopology] | None = None,
    with_grad: bool = True,
) -> LossBreakdown:
    """Objective summed over batch items and modalities, with parameter gradients.

    Per item and modality: ``sl1(X - X_hat) + sl1(alpha * max_frame(h)) + lambda * sl1(W)``.
    Modalities never observable in an item (alpha == 0) contribute nothing.
    Gradient keys are ``"<modality>/<tensor>"``.
    """
    topologies = DEFAULT_TOPOLOGIES if topologies is None else topologies
    tape = nm.Tape()
    out = LossBreakdown()
    bound_all: dict[str, dict[str, nm.Var]] = {}
    terms = []
    for mod in config.modalities:
        mp = params[mod]
        bound, tensors = mp.on_tape(tape) if with_grad else (mp, None)
        if with_grad:
            bound_all[mod] = tensors
        lam = config.reg_lambda.get(mod, 0.0) if config.reg_enabled else 0.0
        rec_sum = sc_sum = reg_sum = 0.0
        for item in batch:
            mt = item[mod]
            alpha = observability_weight(mt)
            if alpha == 0.0:
                continue
            N, T, P, _ = mt.shape
            adj = factorized_adjacency(topologies[mod], T, P, config.half_window)
            x = tape.const(mt.data)
            res = forward(x, adj, bound)
            rec = nm.smooth_l1_norm(nm.sub(x, res.x_hat))
            hbar = weighted_scores(frame_scores(res.h), alpha)
            sc = nm.smooth_l1_norm(hbar)
            parts = [nm.scale(rec, config.recon_weight), nm.scale(sc, config.score_weight)]
            rec_sum += config.recon_weight * float(rec.value)
            sc_sum += config.score_weight * float(sc.value)
            if lam > 0:
                wsum = None
                for t in bound.named_tensors().values():
                    t = t if isinstance(t, nm.Var) else tape.const(t)
                    term = nm.smooth_l1_norm(t)
                    wsum = term if wsum is None else nm.add(wsum, term)
                reg = nm.scale(wsum, lam)
                parts.append(reg)
                reg_sum += float(reg.value)
            item_total = parts[0]
            for p in parts[1:]:
                item_total = nm.add(item_total, p)
            terms.append(item_total)
        out.recon[mod], out.score[mod], out.reg[mod] = rec_sum, sc_sum, reg_sum

    out.total = out.recon_total + out.score_total + out.reg_total
    if not np.isfinite(out.total):
        bad = [f"{k}[{m}]" for k, d in (("recon", out.recon), ("score", out.score), ("reg", out.reg))
               for m, v in d.items() if not np.isfinite(v)]
        raise FloatingPointError(f"non-finite loss in {', '.join(bad)}")
    if with_grad:
        for mod, tensors in bound_all.items():
            for name, v in tensors.items():
                out.grads[f"{mod}/{name}"] = np.zeros(v.shape)
        if terms:
            total = terms[0]
            for t in terms[1:]:
                total = nm.add(total, t)
            tape.backward(total)
            for mod, tensors in bound_all.items():
                for name, v in tensors.items():
                    if v.grad is not None:
                        out.grads[f"{mod}/{name}"] = v.grad
    return out


def _flat(params: Mapping[str, ModelParams]) -> dict[str, np.ndarray]:
    return {f"{m}/{k}": v for m, mp in params.items() for k, v in mp.named_tensors().items()}


def _unflat(params: Mapping[str, ModelParams], flat: Mapping[str, np.ndarray]) -> dict[str, ModelParams]:
    out = {}
    for m, mp in params.items():
        out[m] = mp.replace({k: flat[f"{m}/{k}"] for k in mp.named_tensors()})
    return out


def init_model(config: TrainConfig, topologies: Mapping[str, ModalityTopology] | None = None) -> dict[str, ModelParams]:
    topologies = DEFAULT_TOPOLOGIES if topologies is None else topologies
    params = {}
    for i, mod in enumerate(config.modalities):
        rng = np.random.default_rng([config.seed, i])
        params[mod] = init_params(mod, topologies[mod].spatial_dim, config.latent_dim, config.hidden, rng)
    return params


def _batch(items: Sequence[dict[str, ModalityTensor]]) -> list[dict[str, ModalityTensor]]:
    T = max(next(iter(it.values())).shape[1] for it in items)
    return [{m: pad_tensor(mt, T) for m, mt in it.items()} for it in items]


@dataclass
class TrainResult:
    params: dict[str, ModelParams]
    state: nm.AdamState
    history: list[dict]
    val_history: list[float]
    best_epoch: int


def train(
    segments: Sequence[VideoSegment],
    config: TrainConfig,
    topologies: Mapping[str, ModalityTopology] | None = None,
    validation: Sequence[VideoSegment] | None = None,
    checkpoint_dir: str | Path | None = None,
    params: Mapping[str, ModelParams] | None = None,
    max_steps: int | None = None,
    on_epoch_end=None,
) -> TrainResult:
    """Seeded Adam training over shuffled mini-batches of segments.

    Without an explicit ``validation`` set, ``val_fraction`` of the segments
    (rounded down) are held out. Checkpoints ``last.ckpt`` (each epoch) and
    ``best.ckpt`` (lowest validation loss, or training loss when nothing is
    held out) go to ``checkpoint_dir`` when given.
    """
    topologies = DEFAULT_TOPOLOGIES if topologies is None else topologies
    if not segments:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    segments = list(segments)
    if validation is None:
        n_val = int(len(segments) * config.val_fraction)
        order = rng.permutation(len(segments))
        validation = [segments[i] for i in order[:n_val]]
        segments = [segments[i] for i in sorted(order[n_val:])]

    train_items = [segment_tensors(s, config, topologies) for s in segments]
    val_items = [segment_tensors(s, config, topologies) for s in validation]
    if not any(observability_weight(mt) > 0 for it in train_items for mt in it.values()):
        raise ValueError("no modality is observable anywhere in the training set")

    params = dict(init_model(config, topologies) if params is None else params)
    state = nm.AdamState(
        lr=config.lr,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
        weight_decay=config.weight_decay if config.adam_weight_decay_enabled else 0.0,
    )
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckdir is not None:
        ckdir.mkdir(parents=True, exist_ok=True)
    hyper = config.to_dict()

    history: list[dict] = []
    val_history: list[float] = []
    best = np.inf
    best_epoch = -1
    steps = 0
    flat = _flat(params)
    for epoch in range(config.epochs):
        state.lr = config.lr_at_epoch(epoch)
        order = rng.permutation(len(train_items))
        epoch_loss = 0.0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = _batch([train_items[i] for i in order[start:start + config.batch_size]])
            try:
                lb = compute_loss(batch, params, config, topologies)
                flat = nm.adam_step(flat, lb.grads, state)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch} batch {b}: {exc}", params, history) from exc
            params = _unflat(params, flat)
            epoch_loss += lb.total
            history.append({
                "epoch": epoch, "batch": b, "recon": lb.recon_total, "score": lb.score_total,
                "reg": lb.reg_total, "total": lb.total, "lr": state.lr,
            })
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break

        if val_items:
            vloss = sum(compute_loss(_batch([it]), params, config, topologies, with_grad=False).total
                        for it in val_items)
        else:
            vloss = epoch_loss
        val_history.append(vloss)
        logger.debug("epoch %d loss %.6f val %.6f lr %.3g", epoch, epoch_loss, vloss, state.lr)
        if ckdir is not None:
            extra = {"epoch": epoch, "config_digest": config.digest()}
            save_checkpoint(ckdir / "last.ckpt", params, state, topologies, hyper, extra)
            if vloss < best:
                save_checkpoint(ckdir / "best.ckpt", params, state, topologies, hyper, extra)
        if vloss < best:
            best, best_epoch = vloss, epoch
        if on_epoch_end is not None:
            on_epoch_end(epoch, params)
        if max_steps is not None and steps >= max_steps:
            break
    return TrainResult(params, state, history, val_history, best_epoch)


def write_loss_csv(history: Sequence[dict], path: str | Path, header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in LOSS_COLUMNS})
