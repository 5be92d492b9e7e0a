"""Model assembly: encode -> quantize -> separate -> predict, with losses.

The full route splits quantized node features H' into an invariant part
H_inv ~ H' * S and a spurious part H_spu ~ H' * (1 - S) using per-entry
scores S from a second GNN.  Graph-level means of the two parts feed (a) a
linear classifier on z_inv and (b) an alignment loss that asks a small MLP
to reconstruct z_inv from z_inv concatenated with a shuffled batch's z_spu.

Modes: "imold" is the full objective; "erm" is encoder + readout + classifier
only; "erm_rvq" adds quantization (and its commitment term) to erm; the
no_* flags drop one ingredient each from the full route.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import rvq
from .autodiff import _apply
from .config import RunConfig
from .errors import ContractError, NumericError, ShapeError
from .gin import GinConfig, GinParams, _glorot, encode, gin_parameters, init_gin, readout, score
from .graphs import GraphBatch, TaskSpec


@dataclass
class MlpParams:
    """Two-layer MLP head (2d -> d -> d) used as the alignment predictor."""

    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor


@dataclass
class LinearParams:
    """Final linear classifier (d -> K)."""

    w: ad.Tensor
    b: ad.Tensor


@dataclass(frozen=True)
class ModeInfo:
    """What a mode string means operationally."""

    name: str
    separated: bool  # scorer + separation route present
    rvq_mode: str  # "full" | "no_vq" | "no_residual"
    lambdas: tuple[float, float, float]  # effective (inv, reg, cmt) weights

    @property
    def uses_codebook(self) -> bool:
        return self.rvq_mode != "no_vq"


def resolve_mode(config: RunConfig) -> ModeInfo:
    lam = (config.lambda_inv, config.lambda_reg, config.lambda_cmt)
    name = config.mode
    if name == "erm":
        return ModeInfo(name, separated=False, rvq_mode="no_vq", lambdas=(0.0, 0.0, 0.0))
    if name == "erm_rvq":
        return ModeInfo(name, separated=False, rvq_mode="full", lambdas=(0.0, 0.0, lam[2]))
    if name == "imold":
        return ModeInfo(name, separated=True, rvq_mode="full", lambdas=lam)
    if name == "no_vq":
        return ModeInfo(name, separated=True, rvq_mode="no_vq", lambdas=lam)
    if name == "no_r":
        return ModeInfo(name, separated=True, rvq_mode="no_residual", lambdas=lam)
    if name == "no_inv":
        return ModeInfo(name, separated=True, rvq_mode="full", lambdas=(0.0, lam[1], lam[2]))
    if name == "no_reg":
        return ModeInfo(name, separated=True, rvq_mode="full", lambdas=(lam[0], 0.0, lam[2]))
    if name == "no_cmt":
        return ModeInfo(name, separated=True, rvq_mode="full", lambdas=(lam[0], lam[1], 0.0))
    raise ContractError(f"unknown mode {name!r}")


@dataclass
class ModelState:
    config: RunConfig
    task: TaskSpec
    num_node_types: int
    encoder: GinParams
    classifier: LinearParams
    scorer: GinParams | None = None
    predictor: MlpParams | None = None
    codebook: rvq.Codebook | None = None  # seeded from the first training batch


@dataclass
class LossBreakdown:
    pred: float
    inv: float
    reg: float
    cmt: float
    total: float

    def to_dict(self) -> dict:
        return {"pred": self.pred, "inv": self.inv, "reg": self.reg, "cmt": self.cmt, "total": self.total}


@dataclass
class ForwardPass:
    """Every intermediate a caller might need; all tape-recorded Tensors."""

    h: ad.Tensor  # encoder output, (n, d)
    h_prime: ad.Tensor  # after quantization (or identity), (n, d)
    s: ad.Tensor | None  # separating scores, (n, d); None without a scorer
    z: ad.Tensor  # readout(h_prime), (B, d)
    z_inv: ad.Tensor  # classifier input, (B, d)
    z_spu: ad.Tensor  # complement readout, (B, d); zeros without a scorer
    logits: ad.Tensor  # (B, K)
    commitment: ad.Tensor  # scalar
    assignments: np.ndarray | None  # code index per node, for EMA updates


def init_mlp(rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int) -> MlpParams:
    return MlpParams(
        w1=_glorot(rng, d_in, d_hidden),
        b1=ad.Tensor(np.zeros(d_hidden), requires_grad=True),
        w2=_glorot(rng, d_hidden, d_out),
        b2=ad.Tensor(np.zeros(d_out), requires_grad=True),
    )


def init_model(config: RunConfig, task: TaskSpec, num_node_types: int, rng: np.random.Generator) -> ModelState:
    """Draw all parameters.  Draw order (encoder, scorer, predictor,
    classifier) is fixed: it defines how the rng stream is consumed."""
    mode = resolve_mode(config)
    gcfg = GinConfig(node_type_count=num_node_types, num_layers=config.num_layers, hidden_dim=config.hidden_dim)
    d = config.hidden_dim
    encoder = init_gin(gcfg, rng)
    scorer = init_gin(gcfg, rng) if mode.separated else None
    predictor = init_mlp(rng, 2 * d, d, d) if mode.separated else None
    k = task.num_targets if task.kind == "multilabel" else 1
    classifier = LinearParams(w=_glorot(rng, d, k), b=ad.Tensor(np.zeros(k), requires_grad=True))
    return ModelState(
        config=config,
        task=task,
        num_node_types=num_node_types,
        encoder=encoder,
        classifier=classifier,
        scorer=scorer,
        predictor=predictor,
    )


def named_parameters(state: ModelState) -> list[tuple[str, ad.Tensor]]:
    """Stable (name, tensor) listing; the order is the optimizer-state and
    checkpoint order."""
    params = gin_parameters(state.encoder, "encoder")
    if state.scorer is not None:
        params += gin_parameters(state.scorer, "scorer")
    if state.predictor is not None:
        params += [(f"predictor.{n}", getattr(state.predictor, n)) for n in ("w1", "b1", "w2", "b2")]
    params += [("classifier.w", state.classifier.w), ("classifier.b", state.classifier.b)]
    return params


# --- separation -----------------------------------------------------------

_NUDGE_ROUNDS = 8  # empirically <= 4 on adversarial inputs; 8 is a hard cap


def separate(h_prime: ad.Tensor, s: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
    """Split H' into H_inv ~ H' * S and H_spu ~ H' * (1 - S).

    The two halves are adjusted by at most a few ulps so that
    H_inv + H_spu == H' holds bitwise on every entry (the values still match
    the products to ~2e-16 relative).  The adjustment first nudges H_spu
    toward the exact complement; if an entry oscillates on a round-to-even
    tie it nudges H_inv instead, which sits in a finer binade there.
    Gradients are those of the exact products: dH' = g_inv*S + g_spu*(1-S),
    dS = (g_inv - g_spu)*H'.
    """
    hp, sv = h_prime.data, s.data
    if hp.shape != sv.shape:
        raise ShapeError("separate", hp.shape, sv.shape)
    inv = hp * sv
    spu = hp - inv
    for round_ in range(_NUDGE_ROUNDS):
        err = (inv + spu) - hp
        bad = err != 0.0
        if not bad.any():
            break
        target = np.where(err[bad] > 0.0, -np.inf, np.inf)
        if round_ < 3:
            spu[bad] = np.nextafter(spu[bad], target)
        else:
            inv[bad] = np.nextafter(inv[bad], target)
    else:
        raise NumericError("separate: could not reconcile H_inv + H_spu == H'")

    h_inv = _apply(inv, (h_prime, s), (lambda g: g * sv, lambda g: g * hp))
    h_spu = _apply(spu, (h_prime, s), (lambda g: g * (1.0 - sv), lambda g: -g * hp))
    return h_inv, h_spu


def graph_reps(h_inv: ad.Tensor, h_spu: ad.Tensor, segments) -> tuple[ad.Tensor, ad.Tensor]:
    """Mean readout of each half, per graph."""
    return readout(h_inv, segments), readout(h_spu, segments)


# --- losses ---------------------------------------------------------------


def _mlp_forward(p: MlpParams, x: ad.Tensor) -> ad.Tensor:
    hidden = ad.relu(ad.add(ad.matmul(x, p.w1), p.b1))
    return ad.add(ad.matmul(hidden, p.w2), p.b2)


def invariant_loss(z_inv: ad.Tensor, z_spu: ad.Tensor, predictor: MlpParams, perm_seed: int) -> ad.Tensor:
    """-sum_i cos(sg[z_inv_i], predictor(z_inv_i ++ z_spu_{pi(i)})) with a
    seeded uniform permutation pi (fixed points allowed)."""
    b = z_inv.data.shape[0]
    if b < 2:
        raise ContractError(f"invariant_loss: batch of {b} cannot be shuffled")
    perm = np.random.default_rng(perm_seed).permutation(b)
    z_tilde = ad.concat_last(z_inv, ad.gather_rows(z_spu, perm))
    rebuilt = _mlp_forward(predictor, z_tilde)
    sims = ad.cosine_similarity(ad.stop_gradient(z_inv), rebuilt)
    return ad.mul(ad.sum_all(sims), -1.0)


def _classify(z_inv: ad.Tensor, classifier: LinearParams) -> ad.Tensor:
    return ad.add(ad.matmul(z_inv, classifier.w), classifier.b)


def prediction_loss(z_inv: ad.Tensor, labels: np.ndarray, classifier: LinearParams, task: TaskSpec) -> tuple[ad.Tensor, ad.Tensor]:
    """(loss, logits).  Binary/multilabel use mean BCE over observed entries;
    regression uses MSE.  Missing multilabel entries (NaN) are masked out."""
    logits = _classify(z_inv, classifier)
    b, k = logits.data.shape
    y = np.asarray(labels, dtype=np.float64)
    if task.kind == "multilabel":
        if y.shape != (b, k):
            raise ShapeError("prediction_loss", y.shape, (b, k))
        mask = ~np.isnan(y)
        loss = ad.bce_with_logits(logits, np.where(mask, y, 0.0), mask)
    elif task.kind == "binary":
        if y.shape != (b,) or k != 1:
            raise ShapeError("prediction_loss", y.shape, (b, k))
        loss = ad.bce_with_logits(logits, y.reshape(b, 1))
    elif task.kind == "regression":
        if y.shape != (b,) or k != 1:
            raise ShapeError("prediction_loss", y.shape, (b, k))
        loss = ad.mse(logits, ad.Tensor(y.reshape(b, 1)))
    else:
        raise ContractError(f"unknown task kind {task.kind!r}")
    return loss, logits


def scorer_regularizer(s: ad.Tensor, gamma: float) -> ad.Tensor:
    """| mean of all entries of S - gamma |, over the batch's full node set."""
    if not 0.0 <= gamma <= 1.0:
        raise ContractError(f"gamma must be in [0,1], got {gamma}")
    return ad.absolute(ad.sub(ad.mean_all(s), gamma))


# --- full pipeline --------------------------------------------------------


def forward(state: ModelState, batch: GraphBatch) -> ForwardPass:
    """Run the mode's route on one batch.  Pure given a frozen state: no
    rng, no mutation, usable inside or outside a tape."""
    mode = resolve_mode(state.config)
    if mode.uses_codebook and state.codebook is None:
        raise ContractError("forward: mode quantizes but the codebook is uninitialized")
    if mode.separated and (state.scorer is None or state.predictor is None):
        raise ContractError(f"forward: mode {mode.name!r} needs scorer/predictor params missing from this state")
    h = encode(state.encoder, batch)
    q = rvq.apply_rvq(state.codebook, h, mode.rvq_mode)
    z = readout(q.h_prime, batch.segment_offsets)
    if mode.separated:
        s = score(state.scorer, batch)
        h_inv, h_spu = separate(q.h_prime, s)
        z_inv, z_spu = graph_reps(h_inv, h_spu, batch.segment_offsets)
    else:
        s = None
        z_inv = z
        z_spu = ad.Tensor(np.zeros_like(z.data))
    return ForwardPass(
        h=h,
        h_prime=q.h_prime,
        s=s,
        z=z,
        z_inv=z_inv,
        z_spu=z_spu,
        logits=_classify(z_inv, state.classifier),
        commitment=q.commitment,
        assignments=q.assignments,
    )


def losses(state: ModelState, batch: GraphBatch, perm_seed: int) -> tuple[ad.Tensor, LossBreakdown, ForwardPass]:
    """All four loss parts and the weighted total, as (tensor, floats, pass).

    The total is assembled in the fixed order
    pred + lam1*inv + lam2*reg + lam3*cmt so the reported floats satisfy
    that identity bitwise.
    """
    mode = resolve_mode(state.config)
    lam1, lam2, lam3 = mode.lambdas
    fp = forward(state, batch)
    pred_t, logits = prediction_loss(fp.z_inv, batch.labels, state.classifier, state.task)
    fp.logits = logits
    if mode.separated:
        inv_t = invariant_loss(fp.z_inv, fp.z_spu, state.predictor, perm_seed)
        reg_t = scorer_regularizer(fp.s, state.config.gamma)
    else:
        inv_t = ad.Tensor(0.0)
        reg_t = ad.Tensor(0.0)
    cmt_t = fp.commitment
    total = ad.add(
        ad.add(ad.add(pred_t, ad.mul(inv_t, lam1)), ad.mul(reg_t, lam2)),
        ad.mul(cmt_t, lam3),
    )
    breakdown = LossBreakdown(
        pred=float(pred_t.data),
        inv=float(inv_t.data),
        reg=float(reg_t.data),
        cmt=float(cmt_t.data),
        total=float(total.data),
    )
    return total, breakdown, fp


def total_loss(batch: GraphBatch, state: ModelState, config: RunConfig, perm_seed: int = 0) -> LossBreakdown:
    """Convenience wrapper returning only the numbers."""
    if config is not state.config:
        state = dataclasses.replace(state, config=config)
    return losses(state, batch, perm_seed)[1]
