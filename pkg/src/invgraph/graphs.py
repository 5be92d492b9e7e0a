"""Graph data model, JSONL dataset format, splits, and mini-batching.

One graph per line with keys exactly {id, num_nodes, node_types, edges,
label, env?, split}.  Undirected edges are stored once as (u, v) with
u < v; message passing expands them to both directions.  Multilabel tasks
encode missing targets as null on disk and NaN in memory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, EmptyDatasetError, ParseError, ValidationError

SPLITS = ("train", "val", "test")
_REQUIRED_KEYS = {"id", "num_nodes", "node_types", "edges", "label", "split"}
_ALLOWED_KEYS = _REQUIRED_KEYS | {"env"}


@dataclass(frozen=True)
class Graph:
    id: str
    node_types: np.ndarray  # (num_nodes,) int64
    edges: np.ndarray  # (num_edges, 2) int64, u < v per row
    label: float | np.ndarray  # scalar, or float vector with NaN for missing
    split: str
    env: str | None = None

    @property
    def num_nodes(self) -> int:
        return int(self.node_types.shape[0])


@dataclass(frozen=True)
class TaskSpec:
    kind: str  # binary | multilabel | regression
    num_targets: int = 1


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    shift_kind: str | None = None  # covariate | concept | None if not inferable


@dataclass(frozen=True)
class Dataset:
    graphs: tuple[Graph, ...]
    split: DatasetSplit
    task: TaskSpec

    def by_split(self, name: str) -> list[Graph]:
        if name not in SPLITS:
            raise ContractError(f"unknown split {name!r}")
        return [g for g in self.graphs if g.split == name]

    @property
    def num_node_types(self) -> int:
        return int(max(g.node_types.max() for g in self.graphs)) + 1


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr

def _label_value(raw, gid: str):
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ValidationError(f"graph {gid}: label entries must be numbers")
    if not math.isfinite(raw):
        raise ValidationError(f"graph {gid}: non-finite label")
    return float(raw)


def _parse_graph(obj: dict, gid_hint: str) -> Graph:
    keys = set(obj)
    if not _REQUIRED_KEYS <= keys:
        raise ValidationError(f"graph {gid_hint}: missing keys {sorted(_REQUIRED_KEYS - keys)}")
    if keys - _ALLOWED_KEYS:
        raise ValidationError(f"graph {gid_hint}: unexpected keys {sorted(keys - _ALLOWED_KEYS)}")
    gid = obj["id"]
    if not isinstance(gid, str) or not gid:
        raise ValidationError(f"graph {gid_hint}: id must be a non-empty string")

    n = obj["num_nodes"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ValidationError(f"graph {gid}: num_nodes must be a positive int")
    types = obj["node_types"]
    if not isinstance(types, list) or len(types) != n:
        raise ValidationError(f"graph {gid}: node_types must list {n} entries")
    if any(not isinstance(t, int) or isinstance(t, bool) or t < 0 for t in types):
        raise ValidationError(f"graph {gid}: node types must be non-negative ints")

    edges = obj["edges"]
    if not isinstance(edges, list):
        raise ValidationError(f"graph {gid}: edges must be a list of pairs")
    seen = set()
    for e in edges:
        if not isinstance(e, list) or len(e) != 2 or any(not isinstance(v, int) or isinstance(v, bool) for v in e):
            raise ValidationError(f"graph {gid}: edge {e!r} is not an int pair")
        u, v = e
        if u == v:
            raise ValidationError(f"graph {gid}: self-loop at node {u}")
        if not (0 <= u < v < n):
            raise ValidationError(f"graph {gid}: edge ({u},{v}) violates 0 <= u < v < num_nodes")
        if (u, v) in seen:
            raise ValidationError(f"graph {gid}: duplicate edge ({u},{v})")
        seen.add((u, v))

    raw_label = obj["label"]
    if isinstance(raw_label, list):
        if not raw_label:
            raise ValidationError(f"graph {gid}: empty label vector")
        vec = np.array(
            [math.nan if t is None else _label_value(t, gid) for t in raw_label], dtype=np.float64
        )
        observed = vec[~np.isnan(vec)]
        if not np.all(np.isin(observed, (0.0, 1.0))):
            raise ValidationError(f"graph {gid}: multilabel entries must be 0, 1, or null")
        label: float | np.ndarray = _frozen(vec)
    else:
        if raw_label is None:
            raise ValidationError(f"graph {gid}: scalar label cannot be null")
        label = _label_value(raw_label, gid)

    split = obj["split"]
    if split not in SPLITS:
        raise ValidationError(f"graph {gid}: split must be one of {SPLITS}")
    env = obj.get("env")
    if env is not None and (not isinstance(env, str) or not env):
        raise ValidationError(f"graph {gid}: env must be a non-empty string")

    edge_arr = np.array(edges, dtype=np.int64).reshape(len(edges), 2)
    return Graph(
        id=gid,
        node_types=_frozen(np.array(types, dtype=np.int64)),
        edges=_frozen(edge_arr),
        label=label,
        split=split,
        env=env,
    )


def _infer_shift_kind(graphs: list[Graph]) -> str | None:
    """Covariate shift iff the test env-tag set is disjoint from train's."""
    train_envs = {g.env for g in graphs if g.split == "train" and g.env is not None}
    test_envs = {g.env for g in graphs if g.split == "test" and g.env is not None}
    if not train_envs or not test_envs:
        return None
    return "covariate" if train_envs.isdisjoint(test_envs) else "concept"


def _infer_task(graphs: list[Graph]) -> TaskSpec:
    first = graphs[0]
    if isinstance(first.label, np.ndarray):
        k = first.label.shape[0]
        for g in graphs:
            if not isinstance(g.label, np.ndarray) or g.label.shape[0] != k:
                raise ValidationError(f"graph {g.id}: label arity differs from dataset arity {k}")
        return TaskSpec("multilabel", k)
    values = []
    for g in graphs:
        if isinstance(g.label, np.ndarray):
            raise ValidationError(f"graph {g.id}: scalar task but vector label")
        values.append(g.label)
    kind = "binary" if set(values) <= {0.0, 1.0} else "regression"
    return TaskSpec(kind, 1)


def load_dataset(path) -> Dataset:
    """Parse and validate a JSONL dataset file."""
    graphs: list[Graph] = []
    ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("each line must be a JSON object", line=lineno)
            try:
                g = _parse_graph(obj, gid_hint=f"<line {lineno}>")
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
            if g.id in ids:
                raise ValidationError(f"line {lineno}: duplicate graph id {g.id!r}")
            ids.add(g.id)
            graphs.append(g)
    if not graphs:
        raise EmptyDatasetError(f"{path}: no graphs")
    task = _infer_task(graphs)
    split = DatasetSplit(
        train=tuple(g.id for g in graphs if g.split == "train"),
        val=tuple(g.id for g in graphs if g.split == "val"),
        test=tuple(g.id for g in graphs if g.split == "test"),
        shift_kind=_infer_shift_kind(graphs),
    )
    return Dataset(graphs=tuple(graphs), split=split, task=task)


def _label_to_json(label):
    if isinstance(label, np.ndarray):
        return [None if math.isnan(v) else v for v in label.tolist()]
    return label


def serialize_dataset(graphs, path) -> None:
    """Write graphs as JSONL with canonical key order; load round-trips it."""
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            obj = {
                "id": g.id,
                "num_nodes": g.num_nodes,
                "node_types": g.node_types.tolist(),
                "edges": g.edges.tolist(),
                "label": _label_to_json(g.label),
                "split": g.split,
            }
            if g.env is not None:
                obj["env"] = g.env
            fh.write(json.dumps(obj) + "\n")


@dataclass(frozen=True)
class GraphBatch:
    node_types: np.ndarray  # (N,) concatenated
    edges: np.ndarray  # (E, 2) with per-graph index offsets applied
    segment_offsets: np.ndarray  # (B,) exclusive ends, last == N
    labels: np.ndarray  # (B,) or (B, K); NaN marks missing targets
    batch_size: int
    ids: tuple[str, ...] = field(default=())
    envs: tuple[str | None, ...] = field(default=())
    splits: tuple[str, ...] = field(default=())

    @property
    def total_nodes(self) -> int:
        return int(self.segment_offsets[-1])


def _stack_labels(graphs: list[Graph]) -> np.ndarray:
    if isinstance(graphs[0].label, np.ndarray):
        return np.stack([g.label for g in graphs])
    return np.array([g.label for g in graphs], dtype=np.float64)


def collate(graphs: list[Graph]) -> GraphBatch:
    """Concatenate graphs into one disjoint-union batch."""
    if not graphs:
        raise ContractError("collate: empty graph list")
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    offsets = np.cumsum(sizes)
    starts = offsets - sizes
    edge_blocks = [g.edges + s for g, s in zip(graphs, starts)]
    edges = np.concatenate(edge_blocks) if edge_blocks else np.zeros((0, 2), np.int64)
    return GraphBatch(
        node_types=np.concatenate([g.node_types for g in graphs]),
        edges=edges,
        segment_offsets=offsets,
        labels=_stack_labels(graphs),
        batch_size=len(graphs),
        ids=tuple(g.id for g in graphs),
        envs=tuple(g.env for g in graphs),
        splits=tuple(g.split for g in graphs),
    )


def make_batches(graphs, batch_size: int, seed: int | None = None) -> list[GraphBatch]:
    """Chunk graphs into batches, shuffled by seeded RNG when seed is given.

    The trailing batch may be smaller than batch_size; the training loop
    drops it when its size is < 2 (the shuffled-batch augmentation is
    degenerate there), evaluation keeps it.
    """
    if batch_size < 2:
        raise ContractError(f"batch_size must be >= 2, got {batch_size}")
    graphs = list(graphs)
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(graphs))
        graphs = [graphs[i] for i in order]
    return [collate(graphs[i : i + batch_size]) for i in range(0, len(graphs), batch_size)]


def unbatch(batch: GraphBatch) -> list[Graph]:
    """Invert collate; graph order, node order, and edge order are preserved."""
    starts = np.concatenate([[0], batch.segment_offsets[:-1]])
    out = []
    for i in range(batch.batch_size):
        lo, hi = int(starts[i]), int(batch.segment_offsets[i])
        mask = (batch.edges[:, 0] >= lo) & (batch.edges[:, 0] < hi)
        own = batch.edges[mask]
        if own.size and (own.min() < lo or own.max() >= hi):
            raise ContractError("unbatch: edge crosses graph boundary")
        label = batch.labels[i]
        out.append(
            Graph(
                id=batch.ids[i] if batch.ids else str(i),
                node_types=_frozen(batch.node_types[lo:hi].copy()),
                edges=_frozen(own - lo),
                label=float(label) if np.ndim(label) == 0 else _frozen(np.array(label)),
                split=batch.splits[i] if batch.splits else "train",
                env=batch.envs[i] if batch.envs else None,
            )
        )
    return out
