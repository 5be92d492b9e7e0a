"""GIN-style message-passing backbone and mean readout.

Layer rule: h_v <- MLP(h_v + sum_{u in N(v)} h_u), a 2-layer MLP with ReLU
inside and no normalization; epsilon is fixed to 0.  The same architecture
serves as the encoder and, with a sigmoid on top and independent
parameters, as the node scorer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError
from .graphs import GraphBatch


@dataclass(frozen=True)
class GinConfig:
    node_type_count: int
    num_layers: int = 3
    hidden_dim: int = 64
    mlp_hidden: int | None = None  # defaults to hidden_dim

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_dim < 1 or self.node_type_count < 1:
            raise ContractError(f"invalid GinConfig {self}")

    @property
    def mlp_width(self) -> int:
        return self.mlp_hidden or self.hidden_dim


@dataclass
class GinLayer:
    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor


@dataclass
class GinParams:
    embedding: ad.Tensor  # (T, d)
    layers: list[GinLayer]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> ad.Tensor:
    scale = np.sqrt(2.0 / (fan_in + fan_out))
    return ad.Tensor(rng.normal(0.0, scale, size=(fan_in, fan_out)), requires_grad=True)


def init_gin(config: GinConfig, rng: np.random.Generator) -> GinParams:
    d, m = config.hidden_dim, config.mlp_width
    emb = ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(config.node_type_count, d)), requires_grad=True)
    layers = [
        GinLayer(
            w1=_glorot(rng, d, m),
            b1=ad.Tensor(np.zeros(m), requires_grad=True),
            w2=_glorot(rng, m, d),
            b2=ad.Tensor(np.zeros(d), requires_grad=True),
        )
        for _ in range(config.num_layers)
    ]
    return GinParams(embedding=emb, layers=layers)


def gin_parameters(params: GinParams, prefix: str) -> list[tuple[str, ad.Tensor]]:
    out = [(f"{prefix}.embedding", params.embedding)]
    for i, layer in enumerate(params.layers):
        for name in ("w1", "b1", "w2", "b2"):
            out.append((f"{prefix}.layers.{i}.{name}", getattr(layer, name)))
    return out


def encode(params: GinParams, batch: GraphBatch) -> ad.Tensor:
    """Node representations H (total_nodes x d)."""
    t_count = params.embedding.shape[0]
    if batch.node_types.size and batch.node_types.max() >= t_count:
        raise ContractError(
            f"encode: node type {int(batch.node_types.max())} outside embedding table of {t_count}"
        )
    n = batch.total_nodes
    # undirected edges stored once; expand to both directions here
    src = np.concatenate([batch.edges[:, 0], batch.edges[:, 1]])
    dst = np.concatenate([batch.edges[:, 1], batch.edges[:, 0]])
    h = ad.gather_rows(params.embedding, batch.node_types)
    for layer in params.layers:
        msgs = ad.scatter_add(ad.gather_rows(h, src), dst, n)
        agg = ad.add(h, msgs)
        hidden = ad.relu(ad.add(ad.matmul(agg, layer.w1), layer.b1))
        h = ad.add(ad.matmul(hidden, layer.w2), layer.b2)
    return h


def readout(h: ad.Tensor, segment_offsets) -> ad.Tensor:
    """Per-graph mean over node rows (B x d)."""
    return ad.segment_mean(h, segment_offsets)


def score(params: GinParams, batch: GraphBatch) -> ad.Tensor:
    """Separating scores S = sigmoid(GNN(G)), entries strictly in (0, 1)."""
    return ad.sigmoid(encode(params, batch))
