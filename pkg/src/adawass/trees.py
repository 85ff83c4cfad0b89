"""Scenario-tree representation of finitely supported filtered processes.

A process of depth T lives on a rooted tree: the root sits at time level 0
and carries no value, every node at level t >= 1 carries a real vector of
dimension ``value_dims[t-1]`` together with the probability of reaching it
from its parent, and all leaves sit at level T.  The tree structure itself
plays the role of the filtration: what is known at time t is exactly the
node reached at level t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "TreeNode",
    "TreeProcess",
    "PathLaw",
    "ShapeMismatchError",
    "validate",
    "path_distance",
    "path_law",
    "quantize_paths",
    "chain_process",
    "build_process",
    "process_with_values",
    "tree_to_dict",
    "tree_from_dict",
]

PROB_TOL = 1e-12


class ShapeMismatchError(ValueError):
    """Raised when two processes or paths disagree in depth or dimensions."""


@dataclass(frozen=True)
class TreeNode:
    id: int
    parent: int | None
    time: int
    value: tuple[float, ...] | None
    prob: float


@dataclass(frozen=True)
class TreeProcess:
    """Immutable scenario tree; all derived views are cached lazily."""

    depth: int
    value_dims: tuple[int, ...]
    nodes: tuple[TreeNode, ...]

    @cached_property
    def by_id(self) -> Mapping[int, TreeNode]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def children_map(self) -> Mapping[int, tuple[int, ...]]:
        kids: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            if n.parent is not None:
                kids[n.parent].append(n.id)
        return {k: tuple(v) for k, v in kids.items()}

    @cached_property
    def root_id(self) -> int:
        roots = [n.id for n in self.nodes if n.parent is None]
        if len(roots) != 1:
            raise ValueError(f"expected exactly one root, found {len(roots)}")
        return roots[0]

    def children(self, node_id: int) -> tuple[int, ...]:
        return self.children_map[node_id]

    def node(self, node_id: int) -> TreeNode:
        return self.by_id[node_id]

    def level(self, t: int) -> tuple[int, ...]:
        return self._levels[t]

    @cached_property
    def _levels(self) -> tuple[tuple[int, ...], ...]:
        buckets: list[list[int]] = [[] for _ in range(self.depth + 1)]
        for n in self.nodes:
            if 0 <= n.time <= self.depth:
                buckets[n.time].append(n.id)
        return tuple(tuple(b) for b in buckets)

    @cached_property
    def leaves(self) -> tuple[int, ...]:
        return self._levels[self.depth]

    @cached_property
    def reach_prob(self) -> Mapping[int, float]:
        """Probability of reaching each node from the root."""
        probs: dict[int, float] = {self.root_id: 1.0}
        for t in range(1, self.depth + 1):
            for nid in self.level(t):
                n = self.node(nid)
                probs[nid] = probs[n.parent] * n.prob
        return probs

    def path_values(self, node_id: int) -> tuple[tuple[float, ...], ...]:
        """Values along the root-to-node path, one vector per level 1..t."""
        out: list[tuple[float, ...]] = []
        nid: int | None = node_id
        while nid is not None:
            n = self.node(nid)
            if n.value is not None:
                out.append(n.value)
            nid = n.parent
        out.reverse()
        return tuple(out)

    @cached_property
    def leaf_paths(self) -> Mapping[int, tuple[tuple[float, ...], ...]]:
        return {leaf: self.path_values(leaf) for leaf in self.leaves}

    def ancestor_at(self, node_id: int, t: int) -> int:
        nid = node_id
        while self.node(nid).time > t:
            nid = self.node(nid).parent
        return nid


@dataclass(frozen=True)
class PathLaw:
    """Finitely supported law on the path space; one atom per scenario."""

    atoms: tuple[tuple[tuple[tuple[float, ...], ...], float], ...]

    @property
    def total_mass(self) -> float:
        return sum(m for _, m in self.atoms)


def validate(proc: TreeProcess) -> list[str]:
    """Check every structural invariant; returns [] iff the tree is valid."""
    violations: list[str] = []
    roots = [n for n in proc.nodes if n.parent is None]
    if len(roots) != 1:
        violations.append(f"expected exactly one root, found {len(roots)}")
        return violations
    root = roots[0]
    if root.time != 0:
        violations.append(f"root node {root.id} is at level {root.time}, expected 0")
    if root.value is not None:
        violations.append(f"root node {root.id} carries a value")
    if len(proc.value_dims) != proc.depth:
        violations.append(
            f"value_dims has {len(proc.value_dims)} entries for depth {proc.depth}"
        )
        return violations
    if proc.depth < 1:
        violations.append(f"depth {proc.depth} < 1")

    ids = [n.id for n in proc.nodes]
    if len(set(ids)) != len(ids):
        violations.append("duplicate node ids")
        return violations
    by_id = {n.id: n for n in proc.nodes}

    for n in proc.nodes:
        if n.parent is None:
            continue
        if n.parent not in by_id:
            violations.append(f"node {n.id} has unknown parent {n.parent}")
            continue
        parent = by_id[n.parent]
        if n.time != parent.time + 1:
            violations.append(
                f"node {n.id} at level {n.time} under parent at level {parent.time}"
            )
        if not n.prob > 0.0:
            violations.append(f"node {n.id} has non-positive edge probability {n.prob}")
        if n.time < 1 or n.time > proc.depth:
            violations.append(f"node {n.id} at level {n.time} outside 1..{proc.depth}")
            continue
        dim = proc.value_dims[n.time - 1]
        if n.value is None or len(n.value) != dim:
            got = "none" if n.value is None else str(len(n.value))
            violations.append(f"node {n.id} value has dim {got}, expected {dim}")

    kids: dict[int, list[TreeNode]] = {n.id: [] for n in proc.nodes}
    for n in proc.nodes:
        if n.parent is not None and n.parent in kids:
            kids[n.parent].append(n)
    for nid, ks in kids.items():
        node = by_id[nid]
        if node.time < proc.depth:
            if not ks:
                violations.append(f"node {nid} at level {node.time} is a leaf, expected depth {proc.depth}")
            else:
                s = sum(k.prob for k in ks)
                if abs(s - 1.0) > PROB_TOL:
                    violations.append(f"children of node {nid} have probability sum {s!r}")
        elif ks:
            violations.append(f"node {nid} at terminal level has children")
    return violations


def path_distance(x: Sequence[Sequence[float]], y: Sequence[Sequence[float]], p: float) -> float:
    """p-metric between two paths: (sum_t |x_t - y_t|_2^p)^(1/p)."""
    if p < 1.0:
        raise ValueError(f"order p must be >= 1, got {p}")
    if len(x) != len(y):
        raise ShapeMismatchError(f"paths have {len(x)} and {len(y)} steps")
    total = 0.0
    for xt, yt in zip(x, y):
        if len(xt) != len(yt):
            raise ShapeMismatchError(f"step dims {len(xt)} != {len(yt)}")
        d = math.sqrt(sum((a - b) ** 2 for a, b in zip(xt, yt)))
        total += d**p
    return total ** (1.0 / p)


def step_cost(a: Sequence[float], b: Sequence[float], p: float) -> float:
    """One-step contribution |a - b|_2^p of the p-metric."""
    return math.sqrt(sum((u - v) ** 2 for u, v in zip(a, b))) ** p


def path_law(proc: TreeProcess) -> PathLaw:
    """Forget the filtration: one atom per leaf with the product mass."""
    reach = proc.reach_prob
    atoms = tuple((proc.leaf_paths[leaf], reach[leaf]) for leaf in proc.leaves)
    return PathLaw(atoms=atoms)


def chain_process(values: Sequence[Sequence[float] | float]) -> TreeProcess:
    """Deterministic process following a single path."""
    vecs = [tuple(v) if isinstance(v, (tuple, list)) else (float(v),) for v in values]
    nodes = [TreeNode(id=0, parent=None, time=0, value=None, prob=1.0)]
    for t, v in enumerate(vecs, start=1):
        nodes.append(TreeNode(id=t, parent=t - 1, time=t, value=v, prob=1.0))
    return TreeProcess(depth=len(vecs), value_dims=tuple(len(v) for v in vecs), nodes=tuple(nodes))


def build_process(value_dims: Sequence[int], branches) -> TreeProcess:
    """Build a process from a nested description.

    ``branches`` is a list of ``(prob, value, children)`` triples hanging off
    the root; ``children`` recursively has the same shape and is empty at the
    terminal level.  Node ids are assigned in depth-first order.
    """
    nodes = [TreeNode(id=0, parent=None, time=0, value=None, prob=1.0)]
    counter = [1]

    def visit(parent_id: int, t: int, subtrees) -> None:
        for prob, value, kids in subtrees:
            nid = counter[0]
            counter[0] += 1
            vec = tuple(value) if isinstance(value, (tuple, list)) else (float(value),)
            nodes.append(TreeNode(id=nid, parent=parent_id, time=t, value=vec, prob=float(prob)))
            visit(nid, t + 1, kids)

    visit(0, 1, branches)
    return TreeProcess(depth=len(value_dims), value_dims=tuple(value_dims), nodes=tuple(nodes))


def process_with_values(proc: TreeProcess, values: Mapping[int, Sequence[float]],
                        value_dims: Sequence[int] | None = None) -> TreeProcess:
    """Same tree and probabilities, a new value labelling."""
    dims = tuple(value_dims) if value_dims is not None else proc.value_dims
    nodes = []
    for n in proc.nodes:
        if n.parent is None:
            nodes.append(n)
        else:
            nodes.append(TreeNode(id=n.id, parent=n.parent, time=n.time,
                                  value=tuple(float(v) for v in values[n.id]), prob=n.prob))
    return TreeProcess(depth=proc.depth, value_dims=dims, nodes=tuple(nodes))


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Plain Lloyd iterations with rng-seeded init; returns cluster labels."""
    uniq = np.unique(points, axis=0)
    k = min(k, len(uniq))
    if k == len(uniq):
        centers = uniq.astype(float)
    else:
        idx = rng.choice(len(uniq), size=k, replace=False)
        centers = uniq[np.sort(idx)].astype(float)
    labels = np.zeros(len(points), dtype=int)
    for _ in range(50):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        if (new_labels == labels).all() and _ > 0:
            break
        labels = new_labels
        for j in range(k):
            members = points[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    # drop empty clusters and relabel in order of first appearance
    used = sorted(set(labels.tolist()))
    remap = {old: new for new, old in enumerate(used)}
    return np.array([remap[l] for l in labels], dtype=int)


def quantize_paths(samples: Sequence[Sequence[Sequence[float] | float]],
                   branching: Sequence[int], seed: int = 0) -> TreeProcess:
    """Empirical scenario tree by per-level clustering of sample-path prefixes.

    Samples sharing a node at level t-1 are clustered on their step-t values
    into at most ``branching[t-1]`` groups; each non-empty group becomes a
    child carrying the group centroid and the empirical frequency.
    Deterministic for a fixed seed.
    """
    if not samples:
        raise ValueError("no sample paths given")
    depth = len(samples[0])
    if len(branching) != depth:
        raise ValueError(f"branching has {len(branching)} entries for depth {depth}")
    if any(b < 1 for b in branching):
        raise ValueError("branching factors must be >= 1")
    paths = []
    for s in samples:
        if len(s) != depth:
            raise ShapeMismatchError("sample paths have unequal depth")
        paths.append([np.atleast_1d(np.asarray(step, dtype=float)) for step in s])
    dims = tuple(len(step) for step in paths[0])
    for s in paths:
        if tuple(len(step) for step in s) != dims:
            raise ShapeMismatchError("sample paths have unequal step dimensions")

    rng = np.random.default_rng(seed)
    nodes = [TreeNode(id=0, parent=None, time=0, value=None, prob=1.0)]
    counter = [1]

    def split(parent_id: int, t: int, members: list[int]) -> None:
        if t > depth:
            return
        pts = np.array([paths[i][t - 1] for i in members])
        labels = _kmeans(pts, branching[t - 1], rng)
        groups: dict[int, list[int]] = {}
        for i, lab in zip(members, labels):
            groups.setdefault(int(lab), []).append(i)
        # sort children by centroid for a stable layout
        entries = []
        for lab, grp in groups.items():
            centroid = np.array([paths[i][t - 1] for i in grp]).mean(axis=0)
            entries.append((tuple(centroid.tolist()), grp))
        entries.sort(key=lambda e: e[0])
        for centroid, grp in entries:
            nid = counter[0]
            counter[0] += 1
            nodes.append(TreeNode(id=nid, parent=parent_id, time=t,
                                  value=centroid, prob=len(grp) / len(members)))
            split(nid, t + 1, grp)

    split(0, 1, list(range(len(paths))))
    return TreeProcess(depth=depth, value_dims=dims, nodes=tuple(nodes))


def tree_to_dict(proc: TreeProcess) -> dict:
    """JSON-ready form of a process."""
    return {
        "depth": proc.depth,
        "value_dims": list(proc.value_dims),
        "nodes": [
            {
                "id": n.id,
                "parent": n.parent,
                "time": n.time,
                "value": None if n.value is None else list(n.value),
                "prob": n.prob,
            }
            for n in proc.nodes
        ],
    }


def tree_from_dict(data: dict) -> TreeProcess:
    """Inverse of :func:`tree_to_dict`; raises ValueError on malformed input."""
    try:
        depth = int(data["depth"])
        dims = tuple(int(d) for d in data["value_dims"])
        nodes = tuple(
            TreeNode(
                id=int(n["id"]),
                parent=None if n["parent"] is None else int(n["parent"]),
                time=int(n["time"]),
                value=None if n["value"] is None else tuple(float(v) for v in n["value"]),
                prob=float(n["prob"]),
            )
            for n in data["nodes"]
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed tree document: {exc}") from exc
    return TreeProcess(depth=depth, value_dims=dims, nodes=nodes)
