"""Finite-difference audits of every analytic gradient in the package.

Two layers: a primitive sweep exercising each differentiable operation on
random inputs, and an end-to-end audit comparing the total objective's
parameter gradients on a toy model (hidden_dim=4, 2 layers, codebook of 4,
batch of 3, all loss terms active) against central differences.

Finite differences measure the total derivative of whatever expression is
actually evaluated, so constructs whose gradients are defined rather than
derived — the stop-gradient anchor in the invariance loss and the
straight-through code lookup — cannot be probed on the live pipeline.
The audit instead evaluates the objective with those definitions made
literal: the anchor pinned to its unperturbed value and the code lookup
replaced by its frozen local linearization.  It first asserts that this
surrogate agrees with the live pipeline at the anchor point, then that
the live backward pass reproduces the surrogate's derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model, rvq
from .autodiff import Tape, Tensor, backward
from .config import RunConfig
from .gin import encode, score
from .graphs import Graph, TaskSpec, collate

TOLERANCE = 1e-4
FD_STEP = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    worst_rel_err: float
    tolerance: float = TOLERANCE

    @property
    def ok(self) -> bool:
        return self.worst_rel_err <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name}: worst relative error {self.worst_rel_err:.2e} (tolerance {self.tolerance:.0e})"


# --- primitive sweep ---------------------------------------------------------


def _primitive_cases(rng: np.random.Generator):
    """(name, input array, scalar-valued closure) triples for grad_check.

    Each closure touches one primitive plus the minimal glue to reach a
    scalar.  Inputs for relu/absolute are kept away from the kink, and
    cosine inputs away from zero norm, so the derivative exists at the
    probe point.
    """
    a = rng.normal(size=(5, 4))
    b = rng.normal(size=(5, 4))
    w = rng.normal(size=(4, 3))
    off = rng.normal(size=(5, 4))
    offsets = np.array([2, 5], dtype=np.int64)  # exclusive segment ends
    idx = np.array([0, 2, 2, 4, 1], dtype=np.int64)
    logits = rng.normal(size=(5, 2))
    targets = (rng.random(size=(5, 2)) < 0.5).astype(np.float64)
    mask = np.ones((5, 2), dtype=bool)
    mask[1, 0] = False
    safe = a + np.sign(a) * 0.2  # keeps |x| >= 0.2 elementwise
    w6 = rng.normal(size=(6, 4))

    return [
        ("add", a, lambda t: ad.sum_all(ad.mul(ad.add(t, Tensor(b)), Tensor(off)))),
        ("sub", a, lambda t: ad.sum_all(ad.mul(ad.sub(Tensor(b), t), Tensor(off)))),
        ("mul", a, lambda t: ad.sum_all(ad.mul(t, Tensor(b)))),
        ("mul_broadcast", a, lambda t: ad.sum_all(ad.mul(t, Tensor(b[:, :1])))),
        ("matmul_left", a, lambda t: ad.sum_all(ad.matmul(t, Tensor(w)))),
        ("matmul_right", w, lambda t: ad.sum_all(ad.matmul(Tensor(a), t))),
        ("concat_last", a, lambda t: ad.sum_all(ad.mul(ad.concat_last(t, t), Tensor(np.concatenate([off, b], axis=1))))),
        ("sigmoid", a, lambda t: ad.sum_all(ad.mul(ad.sigmoid(t), Tensor(off)))),
        ("relu", safe, lambda t: ad.sum_all(ad.mul(ad.relu(t), Tensor(off)))),
        ("absolute", safe, lambda t: ad.sum_all(ad.mul(ad.absolute(t), Tensor(off)))),
        ("sum_all", a, lambda t: ad.sum_all(t)),
        ("mean_all", a, lambda t: ad.mean_all(t)),
        ("segment_sum", a, lambda t: ad.sum_all(ad.mul(ad.segment_sum(t, offsets), Tensor(b[:2])))),
        ("segment_mean", a, lambda t: ad.sum_all(ad.mul(ad.segment_mean(t, offsets), Tensor(b[:2])))),
        ("l2_norm", safe, lambda t: ad.sum_all(ad.mul(ad.l2_norm(t), Tensor(b[:, :1])))),
        ("cosine_similarity_left", safe, lambda t: ad.sum_all(ad.cosine_similarity(t, Tensor(b + np.sign(b) * 0.2)))),
        ("cosine_similarity_right", safe, lambda t: ad.sum_all(ad.cosine_similarity(Tensor(b + np.sign(b) * 0.2), t))),
        ("squared_error", a, lambda t: ad.squared_error(t, Tensor(b))),
        ("mse", a, lambda t: ad.mse(t, Tensor(b))),
        ("bce_with_logits", logits, lambda t: ad.bce_with_logits(t, targets)),
        ("bce_with_logits_masked", logits, lambda t: ad.bce_with_logits(t, targets, mask)),
        ("gather_rows", a, lambda t: ad.sum_all(ad.mul(ad.gather_rows(t, idx), Tensor(b)))),
        ("scatter_add", a, lambda t: ad.sum_all(ad.mul(ad.scatter_add(t, idx, 6), Tensor(w6)))),
    ]


def _definitional_cases(rng: np.random.Generator) -> list[CheckResult]:
    """Ops whose gradients are definitions, checked as exact identities.

    stop_gradient must contribute nothing; straight_through must pass the
    cotangent through unchanged, i.e. match the gradient of the identity
    on x regardless of the substituted values.
    """
    x = rng.normal(size=(5, 3))
    v = rng.normal(size=(5, 3))
    w = rng.normal(size=(5, 3))

    with Tape():
        leaf = Tensor(x, requires_grad=True)
        out = ad.sum_all(ad.mul(ad.add(leaf, ad.stop_gradient(ad.mul(leaf, 3.0))), Tensor(w)))
        g = backward(out)[leaf]
    sg_err = float(np.abs(g - w).max())  # the sg branch must not add 3·w

    with Tape():
        leaf = Tensor(x, requires_grad=True)
        out = ad.sum_all(ad.mul(ad.straight_through(leaf, v), Tensor(w)))
        g = backward(out)[leaf]
    st_err = float(np.abs(g - w).max())

    return [
        CheckResult("stop_gradient_blocks", sg_err, 0.0),
        CheckResult("straight_through_identity", st_err, 0.0),
    ]


def check_primitives(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = [
        CheckResult(f"primitive/{name}", ad.grad_check(f, x, step=FD_STEP))
        for name, x, f in _primitive_cases(rng)
    ]
    results.extend(_definitional_cases(rng))
    return results


# --- end-to-end audit --------------------------------------------------------


def _toy_batch(task: TaskSpec):
    def make(gid: str, label, n: int) -> Graph:
        edges = np.array(
            [[i, j] for i in range(n) for j in range(i + 1, n) if j == i + 1 or (i + j) % 3 == 0],
            dtype=np.int64,
        )
        return Graph(id=gid, node_types=np.arange(n, dtype=np.int64) % 2, edges=edges, label=label, split="train")

    if task.kind == "multilabel":
        labels = [np.array([1.0, 0.0]), np.array([0.0, np.nan]), np.array([1.0, 1.0])]
    elif task.kind == "regression":
        labels = [-0.4, 0.9, 0.2]
    else:
        labels = [0.0, 1.0, 1.0]
    return collate([make(f"g{i}", labels[i], 3 + i % 2) for i in range(3)])


def _surrogate_total(state: model.ModelState, batch, perm_seed: int, fp0: model.ForwardPass) -> float:
    """The objective with both gradient definitions made literal.

    Mirrors model.losses except that the code lookup is pinned to the
    unperturbed assignment (full: h + codes0; straight-through: h plus the
    frozen offset codes0 - h0) and the invariance anchor is pinned to the
    unperturbed z_inv.
    """
    mode = model.resolve_mode(state.config)
    lam1, lam2, lam3 = mode.lambdas
    h = encode(state.encoder, batch)
    if mode.rvq_mode == "no_vq":
        h_prime, cmt_t = h, Tensor(0.0)
    else:
        codes0 = state.codebook.codes[fp0.assignments]
        cmt_t = ad.squared_error(h, Tensor(codes0))
        if mode.rvq_mode == "full":
            h_prime = ad.add(h, Tensor(codes0))
        else:
            h_prime = ad.add(h, Tensor(codes0 - fp0.h.data))
    if mode.separated:
        s = score(state.scorer, batch)
        h_inv, h_spu = model.separate(h_prime, s)
        z_inv, z_spu = model.graph_reps(h_inv, h_spu, batch.segment_offsets)
        perm = np.random.default_rng(perm_seed).permutation(z_inv.data.shape[0])
        z_tilde = ad.concat_last(z_inv, ad.gather_rows(z_spu, perm))
        rebuilt = model._mlp_forward(state.predictor, z_tilde)
        inv_t = ad.mul(ad.sum_all(ad.cosine_similarity(Tensor(fp0.z_inv.data), rebuilt)), -1.0)
        reg_t = model.scorer_regularizer(s, state.config.gamma)
    else:
        z_inv = ad.segment_mean(h_prime, batch.segment_offsets)
        inv_t, reg_t = Tensor(0.0), Tensor(0.0)
    pred_t, _ = model.prediction_loss(z_inv, batch.labels, state.classifier, state.task)
    total = ad.add(
        ad.add(ad.add(pred_t, ad.mul(inv_t, lam1)), ad.mul(reg_t, lam2)),
        ad.mul(cmt_t, lam3),
    )
    return float(total.data)


def check_end_to_end(mode: str, task: TaskSpec | None = None, seed: int = 17, perm_seed: int = 4) -> CheckResult:
    """Exhaustive FD audit of d(total)/d(parameter) for one mode.

    Every entry of every parameter is probed; the codebook stays frozen
    throughout (its update is an EMA, not gradient descent).
    """
    task = task or TaskSpec("binary", 1)
    cfg = RunConfig(
        dataset="mem", mode=mode, hidden_dim=4, num_layers=2, codebook_size=4, batch_size=3
    ).validate()
    state = model.init_model(cfg, task, 2, np.random.default_rng(seed))
    batch = _toy_batch(task)
    if model.resolve_mode(cfg).uses_codebook:
        h = encode(state.encoder, batch)
        state.codebook = rvq.init_codebook(h.data, cfg.codebook_size, cfg.eta)

    with Tape():
        total, _, fp0 = model.losses(state, batch, perm_seed=perm_seed)
        grads = backward(total)
    anchor_gap = abs(_surrogate_total(state, batch, perm_seed, fp0) - float(total.data))
    if anchor_gap > 1e-9:
        return CheckResult(f"end_to_end/{mode}/{task.kind} (anchor mismatch)", float("inf"))

    worst = 0.0
    for _, p in model.named_parameters(state):
        flat_view = p.data.reshape(-1)
        analytic = grads[p].reshape(-1)
        for k in range(flat_view.size):
            old = flat_view[k]
            flat_view[k] = old + FD_STEP
            hi = _surrogate_total(state, batch, perm_seed, fp0)
            flat_view[k] = old - FD_STEP
            lo = _surrogate_total(state, batch, perm_seed, fp0)
            flat_view[k] = old
            numeric = (hi - lo) / (2.0 * FD_STEP)
            worst = max(worst, abs(analytic[k] - numeric) / max(1.0, abs(numeric)))
    return CheckResult(f"end_to_end/{mode}/{task.kind}", worst)


def run(full: bool = False, echo=print) -> bool:
    """Run the audit; one line per check.  Returns True iff all pass.

    The quick audit covers the primitive sweep plus the full objective
    (every loss term active) on the binary toy model.  --full extends to
    every mode and to the multilabel and regression heads.
    """
    results = check_primitives()
    results.append(check_end_to_end("imold"))
    if full:
        for mode in ("erm", "erm_rvq", "no_vq", "no_r", "no_inv", "no_reg", "no_cmt"):
            results.append(check_end_to_end(mode))
        results.append(check_end_to_end("imold", TaskSpec("multilabel", 2)))
        results.append(check_end_to_end("imold", TaskSpec("regression", 1)))
    for r in results:
        echo(r.line())
    ok = all(r.ok for r in results)
    echo(f"{'ALL CHECKS PASSED' if ok else 'CHECKS FAILED'} ({sum(r.ok for r in results)}/{len(results)})")
    return ok
