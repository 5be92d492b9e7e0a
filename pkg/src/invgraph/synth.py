"""Deterministic generator of motif-based OOD graph classification datasets.

Every graph is a random base tree plus two planted components, each joined
to the base by a single cut edge: an invariant motif that determines the
label and a spurious motif that records the environment.  Cut-edge
attachment means cycles exist only inside planted components, so the label
is a deterministic function of the invariant motif by construction; base
trees are nonetheless rejected if they already contain either invariant
template (they cannot, being acyclic, but the check keeps the argument
honest for custom motif choices).

Validation is in-distribution (training environments, training
correlation), so model selection sees exactly what training saw.
Covariate shift gives the test split its own environment pool, disjoint
from training; concept shift keeps one pool but flips the spurious-label
correlation from rho to 1 - rho at test time.

The default unseen pool (bowtie, banner) is deliberately built from the
same local structure as the training pool (triangles and squares): the
encoder maps those components near familiar prototypes, so a
spurious-motif detector fires confidently on them even though the test
environment carries no label information. Confident-but-uninformative is
exactly the failure mode that punishes shortcut reliance; wildly alien
test motifs would instead perturb every model's representation equally.

Default invariant pair ("ortho", "para"): the same six-node ring carrying
two marked nodes, adjacent in one template and opposite in the other, the
way disubstituted benzenes differ only in substitution pattern. The two
islands match in node count, edge count, degree multiset, and node-type
histogram, so no size or first-order count statistic reveals the label;
it lives purely in where the two marks sit relative to each other. The
default environment motifs (triangles and squares) differ in plain size
and carry their own reserved type, so the environment signal is far
quicker to pick up than the label signal -- exactly the imbalance that
makes the shortcut tempting for an unregularized learner. No motif in
the spurious pools can host a six-node ring, and planted components
never merge.

Node types mimic functional groups and follow a reserved layout: base
nodes draw uniformly from ids 0..T-4, the invariant island body is T-3,
its marks are T-2, and the spurious component is T-1. Both classes have
identical type counts (four body nodes, two marks), so types alone carry
no label signal; they make the islands locatable while the label stays
in the mark arrangement.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, SpecError
from .graphs import DatasetSplit, Graph, _frozen, _infer_shift_kind

# small connected templates; nodes 0-indexed, edges u < v
_RING6 = ((0, 1), (0, 5), (1, 2), (2, 3), (3, 4), (4, 5))

MOTIFS: dict[str, tuple[tuple[int, int], ...]] = {
    "triangle": ((0, 1), (0, 2), (1, 2)),
    "square": ((0, 1), (0, 3), (1, 2), (2, 3)),
    "diamond": ((0, 1), (0, 2), (1, 2), (1, 3), (2, 3)),
    "clique4": ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)),
    "banner": ((0, 1), (0, 3), (1, 2), (2, 3), (3, 4)),
    "bowtie": ((0, 1), (0, 2), (1, 2), (2, 3), (2, 4), (3, 4)),
    "cycle5": ((0, 1), (0, 4), (1, 2), (2, 3), (3, 4)),
    "house": ((0, 1), (0, 3), (1, 2), (2, 3), (2, 4), (3, 4)),
    # a 6-cycle plus one chord, opposite (two squares) vs adjacent (triangle
    # + pentagon): same size, same degree multiset {3,3,2,2,2,2}, told apart
    # only by second-order neighborhood structure.  Node 0 is a chord
    # endpoint in both, so the cut edge (attached there) never creates or
    # destroys the distinguishing pattern.
    "domino": ((0, 1), (0, 3), (0, 5), (1, 2), (2, 3), (3, 4), (4, 5)),
    "tripent": ((0, 1), (0, 2), (0, 5), (1, 2), (2, 3), (3, 4), (4, 5)),
    # bipartite (no odd cycles), so they cannot contain a 5-cycle or a house
    "k23": ((0, 2), (0, 3), (0, 4), (1, 2), (1, 3), (1, 4)),
    "k33": ((0, 3), (0, 4), (0, 5), (1, 3), (1, 4), (1, 5), (2, 3), (2, 4), (2, 5)),
    "cycle6": _RING6,
    # disubstituted rings: one shared shape, two marked nodes either adjacent
    # or opposite.  Ring distance is what a monomorphism must preserve, so
    # neither typed template can occur inside a graph built from the other.
    "ortho": _RING6,
    "para": _RING6,
}

# marked template nodes (typed with the reserved mark id when planted);
# node 0 is the cut-edge anchor, so marks stay off it and the anchored
# node's context is label-independent
MARKS: dict[str, tuple[int, ...]] = {"ortho": (1, 2), "para": (1, 4)}


def motif_size(name: str) -> int:
    return max(max(e) for e in MOTIFS[name]) + 1


def contains_motif(num_nodes: int, edges, template_edges) -> bool:
    """Subgraph monomorphism: an injective node map sending every template
    edge to a host edge (non-induced, so a house counts as containing a
    5-cycle)."""
    t_n = max(max(e) for e in template_edges) + 1
    if t_n > num_nodes:
        return False
    t_adj: list[set[int]] = [set() for _ in range(t_n)]
    for u, v in template_edges:
        t_adj[u].add(v)
        t_adj[v].add(u)
    adj: list[set[int]] = [set() for _ in range(num_nodes)]
    for u, v in np.asarray(edges).reshape(-1, 2):
        adj[int(u)].add(int(v))
        adj[int(v)].add(int(u))

    # BFS order so every template node after the first has a mapped neighbor
    order = [0]
    seen = {0}
    for t in order:
        for nb in sorted(t_adj[t]):
            if nb not in seen:
                seen.add(nb)
                order.append(nb)
    if len(order) != t_n:
        raise SpecError("motif template must be connected")

    assignment: dict[int, int] = {}
    used: set[int] = set()

    def extend(pos: int) -> bool:
        if pos == t_n:
            return True
        t = order[pos]
        mapped_nbrs = [assignment[u] for u in t_adj[t] if u in assignment]
        candidates = set.intersection(*(adj[h] for h in mapped_nbrs)) if mapped_nbrs else set(range(num_nodes))
        for h in candidates:
            if h in used or len(adj[h]) < len(t_adj[t]):
                continue
            assignment[t] = h
            used.add(h)
            if extend(pos + 1):
                return True
            del assignment[t]
            used.remove(h)
        return False

    return extend(0)


@dataclass(frozen=True)
class SynthSpec:
    n_train: int = 1000
    n_val: int = 200
    n_test: int = 200
    train_correlation: float = 0.9
    shift_kind: str = "covariate"
    seed: int = 0
    base_nodes: tuple[int, int] = (10, 20)
    node_type_count: int = 8
    invariant_motifs: tuple[str, str] = ("ortho", "para")
    train_envs: tuple[str, ...] = ("triangle", "square")
    test_envs: tuple[str, ...] = ("bowtie", "banner")

    def validate(self) -> None:
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise SpecError("split sizes must be >= 1")
        if not 0.0 <= self.train_correlation <= 1.0:
            raise SpecError(f"train_correlation must be in [0,1], got {self.train_correlation}")
        if self.shift_kind not in ("covariate", "concept"):
            raise SpecError(f"unknown shift_kind {self.shift_kind!r}")
        lo, hi = self.base_nodes
        if not 1 <= lo <= hi:
            raise SpecError(f"bad base_nodes range {self.base_nodes}")
        if self.node_type_count < 4:
            raise SpecError(
                "node_type_count must be >= 4: the top three ids are reserved "
                "for the island body, island marks, and environment components"
            )
        if len(self.invariant_motifs) != 2:
            raise SpecError("exactly two invariant motifs required")
        # concept shift reuses the training pool at test time, so test_envs
        # only participates under covariate shift
        pools = [self.train_envs, self.test_envs] if self.shift_kind == "covariate" else [self.train_envs]
        if any(not pool for pool in pools):
            raise SpecError("each environment pool needs at least one motif")
        for name in list(self.invariant_motifs) + [m for p in pools for m in p]:
            if name not in MOTIFS:
                raise SpecError(f"unknown motif {name!r}; known: {sorted(MOTIFS)}")
            if motif_size(name) > lo:
                raise SpecError(f"motif {name!r} ({motif_size(name)} nodes) larger than smallest base ({lo})")
        if self.shift_kind == "covariate" and set(self.train_envs) & set(self.test_envs):
            raise SpecError("covariate shift requires test envs disjoint from train envs")
        # label integrity: an environment component must never be able to
        # host either invariant template
        for env in {m for p in pools for m in p}:
            for inv in self.invariant_motifs:
                if contains_motif(motif_size(env), MOTIFS[env], MOTIFS[inv]):
                    raise SpecError(f"environment motif {env!r} contains invariant motif {inv!r}")

    @staticmethod
    def from_json(path) -> "SynthSpec":
        with open(path, encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ParseError(f"{path}: spec must be a JSON object")
        known = {f for f in SynthSpec.__dataclass_fields__}
        extra = set(obj) - known
        if extra:
            raise ParseError(f"{path}: unknown spec keys {sorted(extra)}")
        for key in ("base_nodes", "invariant_motifs", "train_envs", "test_envs"):
            if key in obj:
                obj[key] = tuple(obj[key])
        spec = SynthSpec(**obj)
        spec.validate()
        return spec


def _random_tree(rng: np.random.Generator, n: int) -> list[tuple[int, int]]:
    # random recursive tree: node k attaches to a uniform earlier node
    return [(int(rng.integers(0, k)), k) for k in range(1, n)]


def _plant(edges: list[tuple[int, int]], motif: str, offset: int, rng: np.random.Generator, n_base: int) -> int:
    """Append motif edges at `offset` plus one cut edge to the base; returns new node count.

    The cut edge lands on a random base node but always on template node 0,
    so a template's internal degree pattern under attachment is fixed by
    construction rather than varying with the draw."""
    size = motif_size(motif)
    edges.extend((u + offset, v + offset) for u, v in MOTIFS[motif])
    anchor = int(rng.integers(0, n_base))
    edges.append((anchor, offset))
    return offset + size


def _make_graph(spec: SynthSpec, split: str, split_idx: int, i: int, env_pool: tuple[str, ...], aligned_prob: float | None) -> Graph:
    rng = np.random.default_rng([spec.seed, split_idx, i])
    label = i % 2  # exactly balanced classes
    while True:
        n_base = int(rng.integers(spec.base_nodes[0], spec.base_nodes[1] + 1))
        tree = _random_tree(rng, n_base)
        if not any(contains_motif(n_base, tree, MOTIFS[m]) for m in spec.invariant_motifs):
            break

    if aligned_prob is None:
        env = env_pool[int(rng.integers(0, len(env_pool)))]  # label-independent
    else:
        aligned = rng.random() < aligned_prob
        env = env_pool[label % len(env_pool)] if aligned else env_pool[(1 - label) % len(env_pool)]

    shape = spec.invariant_motifs[label]
    edges = list(tree)
    inv_end = _plant(edges, shape, n_base, rng, n_base)
    total = _plant(edges, env, inv_end, rng, n_base)
    t = spec.node_type_count
    types = rng.integers(0, t - 3, size=total)  # base alphabet avoids reserved ids
    types[n_base:inv_end] = t - 3  # invariant island body
    for pos in MARKS.get(shape, ()):
        types[n_base + pos] = t - 2  # island marks
    types[inv_end:total] = t - 1  # environment component
    edge_arr = np.array(sorted(edges), dtype=np.int64).reshape(len(edges), 2)
    return Graph(
        id=f"{split}-{i:05d}",
        node_types=_frozen(types.astype(np.int64)),
        edges=_frozen(edge_arr),
        label=float(label),
        split=split,
        env=env,
    )


def generate(spec: SynthSpec) -> tuple[list[Graph], DatasetSplit]:
    """Generate the full dataset; same spec gives a byte-identical file."""
    spec.validate()
    rho = spec.train_correlation
    if spec.shift_kind == "covariate":
        # in-distribution validation; unseen test environments, where the
        # environment is uncorrelated with the label
        plan = [
            ("train", spec.n_train, spec.train_envs, rho),
            ("val", spec.n_val, spec.train_envs, rho),
            ("test", spec.n_test, spec.test_envs, None),
        ]
    else:
        # one environment pool; correlation flips from rho to 1 - rho at test
        plan = [
            ("train", spec.n_train, spec.train_envs, rho),
            ("val", spec.n_val, spec.train_envs, rho),
            ("test", spec.n_test, spec.train_envs, 1.0 - rho),
        ]
    graphs: list[Graph] = []
    for split_idx, (split, count, pool, aligned) in enumerate(plan):
        graphs.extend(_make_graph(spec, split, split_idx, i, pool, aligned) for i in range(count))
    split = DatasetSplit(
        train=tuple(g.id for g in graphs if g.split == "train"),
        val=tuple(g.id for g in graphs if g.split == "val"),
        test=tuple(g.id for g in graphs if g.split == "test"),
        shift_kind=_infer_shift_kind(graphs),
    )
    return graphs, split
