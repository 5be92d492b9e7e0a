"""Training loop, model selection, checkpoints, evaluation, export.

One epoch: reshuffle, step every batch (forward, backward, Adam update,
then the EMA codebook update), then score the val and test splits.  The
checkpoint keeps the parameters of the epoch with the best validation
metric (higher is better except MAE; ties keep the earlier epoch).  All
randomness is derived from the run seed, so a (config, seed) pair fixes
every byte of the outputs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import rvq
from .autodiff import Tape, backward
from .config import RunConfig
from .errors import (
    CheckpointError,
    ContractError,
    EmptyDatasetError,
    NumericError,
)
from .gin import encode
from .graphs import Dataset, TaskSpec, make_batches
from .metrics import EvalReport, accuracy, average_precision, mae, roc_auc
from .model import (
    LossBreakdown,
    ModelState,
    forward,
    init_model,
    losses,
    named_parameters,
    resolve_mode,
)
from .optim import Adam

CHECKPOINT_VERSION = 1
RESULT_VERSION = 1


# --- metric selection -------------------------------------------------------

_METRIC_FOR_TASK = {"binary": "roc_auc", "multilabel": "ap", "regression": "mae"}


def select_metric(task: TaskSpec, config: RunConfig) -> str:
    if config.select_metric != "auto":
        name = config.select_metric
        if name == "mae" and task.kind != "regression":
            raise ContractError("mae selection requires a regression task")
        if name in ("roc_auc", "accuracy") and task.kind != "binary":
            raise ContractError(f"{name} selection requires a binary task")
        if name == "ap" and task.kind not in ("binary", "multilabel"):
            raise ContractError("ap selection requires a classification task")
        return name
    return _METRIC_FOR_TASK[task.kind]


def metric_direction(name: str) -> int:
    """+1 when larger is better, -1 for error metrics."""
    return -1 if name == "mae" else 1


def effective_task(dataset: Dataset, config: RunConfig) -> TaskSpec:
    task = dataset.task
    if config.task is None or config.task == task.kind:
        return task
    if task.kind == "multilabel" or config.task == "multilabel":
        raise ContractError(
            f"task override {config.task!r} incompatible with {task.num_targets}-target data"
        )
    # binary <-> regression reinterpretations keep the scalar labels
    return TaskSpec(config.task, 1)


# --- evaluation -------------------------------------------------------------


def predict_logits(state: ModelState, graphs, batch_size: int) -> np.ndarray:
    """(N, K) logits in dataset order, frozen state, no tape."""
    if not graphs:
        raise EmptyDatasetError("predict_logits: no graphs")
    rows = []
    for batch in make_batches(graphs, batch_size):
        rows.append(forward(state, batch).logits.data)
    return np.concatenate(rows, axis=0)


def evaluate(state: ModelState, graphs, metric_name: str, batch_size: int | None = None) -> EvalReport:
    """Score one split with a frozen model."""
    bs = batch_size or state.config.batch_size
    logits = predict_logits(state, graphs, bs)
    labels = np.stack([g.label for g in graphs]) if state.task.kind == "multilabel" else np.array(
        [g.label for g in graphs], dtype=np.float64
    )
    if metric_name == "roc_auc":
        value, per_task = roc_auc(logits[:, 0], labels), None
    elif metric_name == "accuracy":
        value, per_task = accuracy(logits[:, 0], labels), None
    elif metric_name == "ap":
        if state.task.kind == "binary":
            per_arr, value = average_precision(logits[:, 0], labels)
        else:
            per_arr, value = average_precision(logits, labels)
        per_task = tuple(float(v) for v in per_arr)
    elif metric_name == "mae":
        value, per_task = mae(logits[:, 0], labels), None
    else:
        raise ContractError(f"unknown metric {metric_name!r}")
    return EvalReport(metric=metric_name, value=value, n_samples=len(graphs), per_task=per_task)


# --- results ----------------------------------------------------------------


@dataclass
class SeedResult:
    seed: int
    metric: str
    best_epoch: int
    best_val_metric: float
    test_metric_at_best_val: float
    train_metric_at_best_val: float
    loss_curve: list[dict] = field(default_factory=list)
    val_curve: list[float] = field(default_factory=list)
    test_curve: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "metric": self.metric,
            "best_epoch": self.best_epoch,
            "best_val_metric": self.best_val_metric,
            "test_metric_at_best_val": self.test_metric_at_best_val,
            "train_metric_at_best_val": self.train_metric_at_best_val,
            "loss_curve": self.loss_curve,
            "val_curve": self.val_curve,
            "test_curve": self.test_curve,
        }


@dataclass
class RunResult:
    config: RunConfig
    metric: str
    per_seed: list[SeedResult]

    def aggregate(self) -> dict:
        val = np.array([s.best_val_metric for s in self.per_seed])
        test = np.array([s.test_metric_at_best_val for s in self.per_seed])
        train = np.array([s.train_metric_at_best_val for s in self.per_seed])
        return {
            "val_mean": float(val.mean()),
            "val_std": float(val.std()),
            "test_mean": float(test.mean()),
            "test_std": float(test.std()),
            "train_mean": float(train.mean()),
            "train_std": float(train.std()),
        }

    def to_dict(self) -> dict:
        return {
            "format_version": RESULT_VERSION,
            "config": self.config.to_dict(),
            "metric": self.metric,
            "per_seed": [s.to_dict() for s in self.per_seed],
            "aggregate": self.aggregate(),
        }


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


# --- training ---------------------------------------------------------------


def _epoch_mean_breakdown(parts: list[LossBreakdown], lambdas) -> dict:
    lam1, lam2, lam3 = lambdas
    pred = float(np.mean([p.pred for p in parts]))
    inv = float(np.mean([p.inv for p in parts]))
    reg = float(np.mean([p.reg for p in parts]))
    cmt = float(np.mean([p.cmt for p in parts]))
    # recomputed from the means, in the same order as the per-batch total,
    # so the stored parts satisfy the total identity exactly
    total = pred + lam1 * inv + lam2 * reg + lam3 * cmt
    return {"pred": pred, "inv": inv, "reg": reg, "cmt": cmt, "total": total}


def _snapshot(state: ModelState) -> dict:
    return {
        "params": {name: p.data.copy() for name, p in named_parameters(state)},
        "codebook": rvq.copy_codebook(state.codebook) if state.codebook is not None else None,
    }


def _restore(state: ModelState, snap: dict) -> None:
    for name, p in named_parameters(state):
        p.data[...] = snap["params"][name]
    state.codebook = snap["codebook"]


def _dump_diagnostics(dump_dir, seed, epoch, batch_idx, bd, state) -> str | None:
    if dump_dir is None:
        return None
    os.makedirs(dump_dir, exist_ok=True)
    path = os.path.join(dump_dir, f"diagnostics_seed{seed}.json")
    norms = {}
    for name, p in named_parameters(state):
        norm = float(np.linalg.norm(p.data))
        norms[name] = norm if np.isfinite(norm) else str(norm)
    loss = None if bd is None else {k: (v if np.isfinite(v) else str(v)) for k, v in bd.to_dict().items()}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            _canonical_json(
                {
                    "seed": seed,
                    "epoch": epoch,
                    "batch": batch_idx,
                    "loss": loss,
                    "param_norms": norms,
                }
            )
        )
    return path


def train_one_seed(config: RunConfig, dataset: Dataset, seed: int, dump_dir=None) -> tuple[SeedResult, ModelState]:
    """Full training for one seed; returns the result and the best-val state."""
    task = effective_task(dataset, config)
    metric = select_metric(task, config)
    direction = metric_direction(metric)
    train_graphs = dataset.by_split("train")
    val_graphs = dataset.by_split("val")
    test_graphs = dataset.by_split("test")
    if not train_graphs or not val_graphs or not test_graphs:
        raise EmptyDatasetError(
            f"need non-empty train/val/test, got {len(train_graphs)}/{len(val_graphs)}/{len(test_graphs)}"
        )

    state = init_model(config, task, dataset.num_node_types, np.random.default_rng(seed))
    mode = resolve_mode(config)
    optimizer = Adam(named_parameters(state), lr=config.lr)

    result = SeedResult(
        seed=seed, metric=metric, best_epoch=0,
        best_val_metric=float("nan"),
        test_metric_at_best_val=float("nan"), train_metric_at_best_val=float("nan"),
    )
    best = None

    for epoch in range(1, config.max_epochs + 1):
        epoch_rng = np.random.default_rng([seed, epoch])
        shuffle_seed = int(epoch_rng.integers(2**63))
        batches = [b for b in make_batches(train_graphs, config.batch_size, seed=shuffle_seed) if b.batch_size >= 2]
        if not batches:
            raise EmptyDatasetError("every training batch has fewer than 2 graphs")

        if mode.uses_codebook and state.codebook is None:
            h0 = encode(state.encoder, batches[0])
            state.codebook = rvq.init_codebook(h0.data, config.codebook_size, config.eta)

        parts = []
        for i, batch in enumerate(batches):
            perm_seed = int(epoch_rng.integers(2**63))
            bd = None
            try:
                with Tape():
                    total, bd, fp = losses(state, batch, perm_seed)
                    if not np.isfinite(bd.total):
                        raise NumericError(f"non-finite loss: {bd.to_dict()}")
                    grads = backward(total)
            except NumericError as exc:
                path = _dump_diagnostics(dump_dir, seed, epoch, i, bd, state)
                where = f" (diagnostics: {path})" if path else ""
                raise NumericError(f"seed {seed} epoch {epoch} batch {i}: {exc}{where}") from None
            optimizer.step(grads)
            if fp.assignments is not None:
                rvq.ema_update(state.codebook, fp.h.data, fp.assignments)
            parts.append(bd)

        result.loss_curve.append(_epoch_mean_breakdown(parts, mode.lambdas))
        val = evaluate(state, val_graphs, metric).value
        test = evaluate(state, test_graphs, metric).value
        result.val_curve.append(val)
        result.test_curve.append(test)
        if best is None or direction * val > direction * result.best_val_metric:
            result.best_epoch = epoch
            result.best_val_metric = val
            result.test_metric_at_best_val = test
            best = _snapshot(state)

    _restore(state, best)
    result.train_metric_at_best_val = evaluate(state, train_graphs, metric).value
    return result, state


def train(config: RunConfig, dataset: Dataset, out_dir=None) -> tuple[RunResult, dict[int, ModelState]]:
    """Run every seed in config.seeds; optionally write result + checkpoints."""
    config.validate()
    per_seed = []
    states = {}
    for seed in config.seeds:
        seed_result, state = train_one_seed(config, dataset, seed, dump_dir=out_dir)
        per_seed.append(seed_result)
        states[seed] = state
    result = RunResult(config=config, metric=per_seed[0].metric, per_seed=per_seed)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "result.json"), "w", encoding="utf-8") as fh:
            fh.write(_canonical_json(result.to_dict()))
        for seed_result, seed in zip(per_seed, config.seeds):
            save_checkpoint(
                os.path.join(out_dir, f"checkpoint_seed{seed}.json"),
                states[seed],
                seed=seed,
                best_epoch=seed_result.best_epoch,
            )
    return result, states


# --- checkpoints ------------------------------------------------------------


def save_checkpoint(path, state: ModelState, seed: int, best_epoch: int) -> None:
    book = state.codebook
    obj = {
        "format_version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "task": {"kind": state.task.kind, "num_targets": state.task.num_targets},
        "num_node_types": state.num_node_types,
        "params": {
            name: {"shape": list(p.data.shape), "data": p.data.reshape(-1).tolist()}
            for name, p in named_parameters(state)
        },
        "codebook": None
        if book is None
        else {
            "codes": book.codes.reshape(-1).tolist(),
            "counts": book.counts.tolist(),
            "sums": book.sums.reshape(-1).tolist(),
            "size": int(book.codes.shape[0]),
            "dim": int(book.codes.shape[1]),
            "eta": book.eta,
            "usage": book.usage.tolist(),
        },
        "rng_state": {"seed": seed, "best_epoch": best_epoch},
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_canonical_json(obj))


def load_checkpoint(path) -> tuple[ModelState, dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    if not isinstance(obj, dict) or obj.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {obj.get('format_version')!r}")
    try:
        config = RunConfig.from_dict(obj["config"])
        task = TaskSpec(obj["task"]["kind"], obj["task"]["num_targets"])
        state = init_model(config, task, int(obj["num_node_types"]), np.random.default_rng(0))
        stored = obj["params"]
        expected = dict(named_parameters(state))
        if set(stored) != set(expected):
            missing = sorted(set(expected) - set(stored))
            extra = sorted(set(stored) - set(expected))
            raise CheckpointError(f"{path}: parameter names mismatch (missing {missing}, extra {extra})")
        for name, p in expected.items():
            entry = stored[name]
            arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
            if arr.shape != p.data.shape:
                raise CheckpointError(f"{path}: {name} has shape {arr.shape}, model expects {p.data.shape}")
            p.data[...] = arr
        book = obj["codebook"]
        if book is not None:
            size, dim = int(book["size"]), int(book["dim"])
            state.codebook = rvq.Codebook(
                codes=np.array(book["codes"], dtype=np.float64).reshape(size, dim),
                counts=np.array(book["counts"], dtype=np.float64),
                sums=np.array(book["sums"], dtype=np.float64).reshape(size, dim),
                eta=float(book["eta"]),
                usage=np.array(book["usage"], dtype=np.int64),
            )
        elif resolve_mode(config).uses_codebook:
            raise CheckpointError(f"{path}: mode {config.mode!r} needs a codebook but none is stored")
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, ContractError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None
    return state, obj["rng_state"]


# --- embedding export -------------------------------------------------------


def export_embeddings(state: ModelState, dataset: Dataset, path) -> int:
    """One JSONL line per graph: id, z_inv, z_spu, z, env, split.  Returns
    the line count.  Byte-identical for a fixed checkpoint and dataset."""
    graphs = list(dataset.graphs)
    lines = []
    offset = 0
    for batch in make_batches(graphs, state.config.batch_size):
        fp = forward(state, batch)
        for i in range(batch.batch_size):
            g = graphs[offset + i]
            lines.append(
                _canonical_json(
                    {
                        "id": g.id,
                        "z_inv": fp.z_inv.data[i].tolist(),
                        "z_spu": fp.z_spu.data[i].tolist(),
                        "z": fp.z.data[i].tolist(),
                        "env": g.env,
                        "split": g.split,
                    }
                )
            )
        offset += batch.batch_size
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return len(lines)
