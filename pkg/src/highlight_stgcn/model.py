"""Per-modality graph autoencoder: encoder, highlight scorer, decoder.

Each layer does a spatial graph convolution per frame, a per-node channel
transform, then a temporal graph convolution per node track::

    y = act(Temporal @ (Spatial @ x) W + b)

Functions accept plain arrays or :class:`~highlight_stgcn.numeric.Var`;
parameters bound with :meth:`ModelParams.on_tape` make the pass differentiable.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Union

import numpy as np

from . import numeric as nm
from .graph import FactorizedAdjacency

Array = Union[np.ndarray, nm.Var]

SPATIAL_AXES = (2, 0)  # person-major (p*N + n) rows of the spatial operator
TEMPORAL_AXES = (1,)


@dataclass
class StgcnLayerParams:
    W: Array            # (C_in, C_out)
    bias: Array         # (C_out,)
    activation: str = "relu"

    @property
    def c_in(self) -> int:
        return self.W.shape[0]

    @property
    def c_out(self) -> int:
        return self.W.shape[1]


@dataclass
class ModelParams:
    modality_id: str
    encoder: list[StgcnLayerParams]
    scorer: StgcnLayerParams
    decoder: list[StgcnLayerParams] = field(default_factory=list)

    def __post_init__(self):
        if self.encoder[-1].c_out != self.scorer.c_in or self.scorer.c_out != 1:
            raise ValueError("scorer must map the latent dimension to one channel")
        if self.decoder[0].c_in != self.latent_dim:
            raise ValueError("decoder input must match the latent dimension")

    @property
    def latent_dim(self) -> int:
        return self.encoder[-1].c_out

    @property
    def input_dim(self) -> int:
        return self.encoder[0].c_in

    def layers(self):
        for i, layer in enumerate(self.encoder):
            yield f"enc{i}", layer
        yield "hlt", self.scorer
        for i, layer in enumerate(self.decoder):
            yield f"dec{i}", layer

    def named_tensors(self) -> dict[str, Array]:
        out = {}
        for prefix, layer in self.layers():
            out[f"{prefix}.W"] = layer.W
            out[f"{prefix}.b"] = layer.bias
        return out

    def replace(self, tensors: dict[str, Array]) -> "ModelParams":
        """Same architecture, tensors swapped by name."""

        def make(prefix, layer):
            return StgcnLayerParams(tensors[f"{prefix}.W"], tensors[f"{prefix}.b"], layer.activation)

        return ModelParams(
            self.modality_id,
            [make(f"enc{i}", l) for i, l in enumerate(self.encoder)],
            make("hlt", self.scorer),
            [make(f"dec{i}", l) for i, l in enumerate(self.decoder)],
        )

    def on_tape(self, tape: nm.Tape) -> tuple["ModelParams", dict[str, nm.Var]]:
        bound = {k: tape.var(v, name=k) for k, v in self.named_tensors().items()}
        return self.replace(bound), bound

    def architecture(self) -> dict:
        return {
            "modality_id": self.modality_id,
            "layers": [[p, l.c_in, l.c_out, l.activation] for p, l in self.layers()],
        }


def _glorot(rng: np.random.Generator, c_in: int, c_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (c_in + c_out))
    return rng.uniform(-bound, bound, size=(c_in, c_out)).astype(np.float32)


def init_params(
    modality_id: str,
    input_dim: int,
    latent_dim: int = 8,
    hidden: Sequence[int] = (16, 16),
    seed: int | np.random.Generator = 0,
) -> ModelParams:
    """Glorot-uniform weights and zero biases, stored as float32."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def stack(dims):
        layers = []
        for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            act = "identity" if k == len(dims) - 2 else "relu"
            layers.append(StgcnLayerParams(_glorot(rng, a, b), np.zeros(b, np.float32), act))
        return layers

    encoder = stack([input_dim, *hidden, latent_dim])
    scorer = StgcnLayerParams(_glorot(rng, latent_dim, 1), np.zeros(1, np.float32), "identity")
    decoder = stack([latent_dim, *reversed(hidden), input_dim])
    return ModelParams(modality_id, encoder, scorer, decoder)


def _as_var(tape: nm.Tape, a: Array) -> nm.Var:
    return a if isinstance(a, nm.Var) else tape.const(a)


def _tape_for(*items) -> nm.Tape:
    for it in items:
        if isinstance(it, nm.Var):
            return it.tape
    return nm.Tape()


def stgcn_layer(x: Array, adj: FactorizedAdjacency, layer: StgcnLayerParams) -> nm.Var:
    tape = _tape_for(x, layer.W, layer.bias)
    x = _as_var(tape, x)
    if x.value.ndim != 4:
        raise ValueError(f"stgcn_layer: expected N x T x P x C input, got {x.shape}")
    N, T, P, C = x.shape
    if adj.num_nodes != N * P:
        raise ValueError(f"spatial stage: operator is {adj.num_nodes} nodes, input has N*P={N * P}")
    if adj.num_frames != T:
        raise ValueError(f"temporal stage: operator is {adj.num_frames} frames, input has T={T}")
    if layer.c_in != C:
        raise ValueError(f"channel stage: layer expects {layer.c_in} channels, input has {C}")
    W = _as_var(tape, layer.W)
    b = _as_var(tape, layer.bias)
    y = nm.mix(x, adj.spatial, SPATIAL_AXES)
    y = nm.matmul(y, W)
    y = nm.mix(y, adj.temporal, TEMPORAL_AXES)
    y = nm.add(y, b)
    if layer.activation == "relu":
        y = nm.relu(y)
    elif layer.activation != "identity":
        raise ValueError(f"unknown activation {layer.activation!r}")
    return y


def _stack(x: Array, adj: FactorizedAdjacency, layers: Sequence[StgcnLayerParams]) -> nm.Var:
    for layer in layers:
        x = stgcn_layer(x, adj, layer)
    return x


def encode(x: Array, adj: FactorizedAdjacency, params: ModelParams) -> nm.Var:
    """Latent features ``N x T x P x D_l``."""
    return _stack(x, adj, params.encoder)


def score(z: Array, adj: FactorizedAdjacency, params: ModelParams) -> nm.Var:
    """Per-node highlight scores ``N x T x P x 1`` in (0, 1)."""
    return nm.sigmoid(stgcn_layer(z, adj, params.scorer))


def weight_latent(z: Array, h: Array) -> nm.Var:
    tape = _tape_for(z, h)
    return nm.hadamard(_as_var(tape, h), _as_var(tape, z))


def decode(z_tilde: Array, adj: FactorizedAdjacency, params: ModelParams) -> nm.Var:
    """Reconstruction ``N x T x P x D``."""
    return _stack(z_tilde, adj, params.decoder)


class ForwardResult(NamedTuple):
    z: nm.Var
    h: nm.Var
    z_tilde: nm.Var
    x_hat: nm.Var


def forward(x: Array, adj: FactorizedAdjacency, params: ModelParams) -> ForwardResult:
    z = encode(x, adj, params)
    h = score(z, adj, params)
    zt = weight_latent(z, h)
    return ForwardResult(z, h, zt, decode(zt, adj, params))
