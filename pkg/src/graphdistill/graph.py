"""Text-attributed graph data model, k-hop subgraphs, and a synthetic generator."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

SPLITS = ("train", "val", "test")


class GraphLoadError(ValueError):
    """A node/edge file violated the TSV contract."""


@dataclass
class TextAttributedGraph:
    """Undirected graph with per-node text, feature vector, label, and split."""

    n: int
    edges: set[tuple[int, int]]          # canonicalized (lo, hi), no self-loops
    attributes: list[str]
    features: np.ndarray                 # (n, d_in) float64
    labels: np.ndarray                   # (n,) int64 in [0, C)
    splits: np.ndarray                   # (n,) of {"train","val","test"}
    class_names: list[str] = field(default_factory=list)
    adjacency: dict[int, list[int]] = field(init=False, repr=False)
    degrees: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        adj: dict[int, list[int]] = {i: [] for i in range(self.n)}
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        for vs in adj.values():
            vs.sort()
        self.adjacency = adj
        self.degrees = np.array([len(adj[i]) for i in range(self.n)],
                                dtype=np.int64)
        if not self.class_names:
            self.class_names = [str(c) for c in range(self.num_classes)]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.n else 0

    @property
    def d_in(self) -> int:
        return self.features.shape[1]

    def split_ids(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return np.flatnonzero(self.splits == split)

    def degree(self, node: int) -> int:
        return int(self.degrees[node])


@dataclass
class NeighborSubgraph:
    """Exact-distance BFS frontiers around a center node.

    ``hop_frontiers[l]`` holds the nodes at shortest-path distance exactly
    ``l`` (ascending id); ``parents`` maps each non-center node to its BFS
    tree parent one hop closer to the center.
    """

    center: int
    hop_frontiers: list[list[int]]
    edges: set[tuple[int, int]]
    parents: dict[int, int]

    def frontier(self, l: int) -> list[int]:
        return self.hop_frontiers[l]

    def tree_path(self, node: int) -> list[int]:
        """Center-to-node path along the BFS tree."""
        path = [node]
        while path[-1] != self.center:
            path.append(self.parents[path[-1]])
        path.reverse()
        return path


def khop_subgraph(g: TextAttributedGraph, center: int, k: int) -> NeighborSubgraph:
    if not (0 <= center < g.n):
        raise ValueError(f"invalid center node {center}")
    if k < 0:
        raise ValueError("k must be >= 0")
    dist = {center: 0}
    parents: dict[int, int] = {}
    frontiers: list[list[int]] = [[center]] + [[] for _ in range(k)]
    edges: set[tuple[int, int]] = set()
    queue = deque([center])
    while queue:
        u = queue.popleft()
        du = dist[u]
        if du >= k:
            continue
        for v in g.adjacency[u]:
            if v not in dist:
                dist[v] = du + 1
                parents[v] = u
                frontiers[du + 1].append(v)
                queue.append(v)
            if dist[v] <= k:
                edges.add((min(u, v), max(u, v)))
    for fr in frontiers:
        fr.sort()
    return NeighborSubgraph(center=center, hop_frontiers=frontiers,
                            edges=edges, parents=parents)


def _stratified_split(labels: np.ndarray, ratios: tuple[float, float, float],
                      rng: np.random.Generator) -> np.ndarray:
    total = sum(ratios)
    fr_train, fr_val = ratios[0] / total, ratios[1] / total
    out = np.empty(labels.shape[0], dtype=object)
    for c in np.unique(labels):
        ids = np.flatnonzero(labels == c)
        rng.shuffle(ids)
        n_c = len(ids)
        n_tr = int(round(fr_train * n_c))
        n_va = int(round(fr_val * n_c))
        n_tr = min(n_tr, n_c)
        n_va = min(n_va, n_c - n_tr)
        out[ids[:n_tr]] = "train"
        out[ids[n_tr:n_tr + n_va]] = "val"
        out[ids[n_tr + n_va:]] = "test"
    return out.astype("U5")


def load_graph(node_file: str | Path, edge_file: str | Path,
               split_ratios: tuple[float, float, float] = (6, 2, 2),
               seed: int = 0,
               class_names: Optional[list[str]] = None) -> TextAttributedGraph:
    """Load a TAG from the tab-separated node/edge files.

    Node lines: ``node_id<TAB>label_id<TAB>text<TAB>f_1,f_2,...``; edge
    lines: ``src<TAB>dst``. Raises :class:`GraphLoadError` naming the
    offending line on any malformed record.
    """
    node_path, edge_path = Path(node_file), Path(edge_file)
    ids: dict[int, int] = {}
    labels: list[int] = []
    texts: list[str] = []
    feats: list[np.ndarray] = []
    with node_path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise GraphLoadError(
                    f"{node_path}:{lineno}: expected 4 tab-separated fields, "
                    f"got {len(parts)}")
            try:
                nid = int(parts[0])
                label = int(parts[1])
            except ValueError:
                raise GraphLoadError(
                    f"{node_path}:{lineno}: non-integer node id or label")
            if nid in ids:
                raise GraphLoadError(f"{node_path}:{lineno}: duplicate node id {nid}")
            if label < 0:
                raise GraphLoadError(f"{node_path}:{lineno}: missing label")
            try:
                vec = np.array([float(x) for x in parts[3].split(",")],
                               dtype=np.float64)
            except ValueError:
                raise GraphLoadError(
                    f"{node_path}:{lineno}: malformed feature list")
            ids[nid] = len(labels)
            labels.append(label)
            texts.append(parts[2])
            feats.append(vec)
    if not ids:
        raise GraphLoadError(f"{node_path}: no nodes")
    d_in = len(feats[0])
    for i, vec in enumerate(feats):
        if len(vec) != d_in:
            raise GraphLoadError(
                f"{node_path}: node {i} has feature dim {len(vec)} != {d_in}")

    edges: set[tuple[int, int]] = set()
    with edge_path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GraphLoadError(
                    f"{edge_path}:{lineno}: expected 2 tab-separated fields")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphLoadError(f"{edge_path}:{lineno}: non-integer endpoint")
            if u not in ids or v not in ids:
                raise GraphLoadError(
                    f"{edge_path}:{lineno}: dangling edge endpoint {u}-{v}")
            iu, iv = ids[u], ids[v]
            if iu == iv:
                continue
            edges.add((min(iu, iv), max(iu, iv)))

    labels_arr = np.array(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    splits = _stratified_split(labels_arr, split_ratios, rng)
    return TextAttributedGraph(
        n=len(labels), edges=edges, attributes=texts,
        features=np.vstack(feats), labels=labels_arr, splits=splits,
        class_names=list(class_names) if class_names else [])


def synth_tag(n: int, C: int, homophily: float, d_in: int, signal: float,
              seed: int, avg_degree: float = 6.0,
              split_ratios: tuple[float, float, float] = (6, 2, 2),
              noise: float = 1.0) -> TextAttributedGraph:
    """Seeded synthetic TAG with controllable homophily and feature signal.

    Labels are uniform over ``C``; each edge joins same-label endpoints with
    probability ``homophily``; features are a class-mean vector scaled by
    ``signal`` plus unit Gaussian noise; attributes embed the class name.
    """
    if n < C:
        raise ValueError("need n >= C")
    if not (0.0 <= homophily <= 1.0):
        raise ValueError("homophily must be in [0, 1]")
    if signal < 0:
        raise ValueError("signal must be >= 0")
    rng = np.random.default_rng(seed)
    labels = np.array([i % C for i in range(n)], dtype=np.int64)
    rng.shuffle(labels)
    by_class = [np.flatnonzero(labels == c) for c in range(C)]

    target_edges = int(round(avg_degree * n / 2))
    edges: set[tuple[int, int]] = set()
    attempts = 0
    while len(edges) < target_edges and attempts < 50 * target_edges:
        attempts += 1
        u = int(rng.integers(n))
        if rng.random() < homophily:
            pool = by_class[labels[u]]
            v = int(pool[rng.integers(len(pool))])
        else:
            v = int(rng.integers(n))
            if labels[v] == labels[u]:
                continue
        if u == v:
            continue
        edges.add((min(u, v), max(u, v)))

    class_means = rng.standard_normal((C, d_in))
    features = signal * class_means[labels] + noise * rng.standard_normal((n, d_in))
    class_names = [f"topic_{c}" for c in range(C)]
    attributes = [
        f"A synthetic document about {class_names[labels[i]]} with "
        f"identifier {i}." for i in range(n)
    ]
    splits = _stratified_split(labels, split_ratios, rng)
    return TextAttributedGraph(
        n=n, edges=edges, attributes=attributes, features=features,
        labels=labels, splits=splits, class_names=class_names)
