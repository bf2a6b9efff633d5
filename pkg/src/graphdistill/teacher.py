"""Teacher-side feature pipeline: raw store, prompt pooling, hop filters,
shared projector, and the seeded mock teacher."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gkdf import read_gkdf, write_gkdf
from .graph import TextAttributedGraph, khop_subgraph
from .optim import Parameter, uniform_init


@dataclass
class RawTeacherStore:
    """Per-(node, hop, prompt) raw teacher vectors of width d_L."""

    d_l: int
    entries: dict[tuple[int, int, int], np.ndarray]
    k: int = field(init=False)
    theta_max: int = field(init=False)

    def __post_init__(self):
        hops = [key[1] for key in self.entries]
        prompts = [key[2] for key in self.entries]
        self.k = max(hops) if hops else 0
        self.theta_max = max(prompts) + 1 if prompts else 0
        for key, vec in self.entries.items():
            if vec.shape != (self.d_l,):
                raise ValueError(f"entry {key} has width {vec.shape}, "
                                 f"expected ({self.d_l},)")
        # prompt indices must be contiguous from 0 per (node, hop)
        by_nh: dict[tuple[int, int], list[int]] = {}
        for node, hop, prompt in self.entries:
            by_nh.setdefault((node, hop), []).append(prompt)
        for (node, hop), idxs in by_nh.items():
            if sorted(idxs) != list(range(len(idxs))):
                raise ValueError(
                    f"non-contiguous prompt indices for node {node} hop {hop}")

    def prompt_count(self, node: int, hop: int) -> int:
        c = 0
        while (node, hop, c) in self.entries:
            c += 1
        if c == 0:
            raise KeyError(f"no entries for node {node} hop {hop}")
        return c

    def save(self, path: str | Path) -> None:
        write_gkdf(path, self.entries, self.d_l)


def load_teacher_features(path: str | Path) -> RawTeacherStore:
    entries, d_l = read_gkdf(path)
    return RawTeacherStore(d_l=d_l, entries=entries)


def pool_prompts(store: RawTeacherStore, node: int, hop: int) -> np.ndarray:
    """Element-wise mean over the theta prompt vectors of (node, hop)."""
    count = store.prompt_count(node, hop)
    acc = np.zeros(store.d_l)
    for p in range(count):
        acc += store.entries[(node, hop, p)]
    return acc / count


class TeacherPipeline:
    """Trainable hop filters plus the cross-hop shared projector.

    Filter l: LayerNorm(sigma(W_l h + b_l)) with square W_l; projector:
    W_p h + b_p mapping d_L -> d_k, identical parameters for every hop.
    """

    def __init__(self, store: RawTeacherStore, d_k: int,
                 rng: np.random.Generator, activation: str = "gelu"):
        if activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.store = store
        self.d_k = d_k
        self.activation = activation
        d_l = store.d_l
        self.filters: list[tuple[Parameter, Parameter]] = []
        for l in range(store.k + 1):
            w = Parameter(f"teacher.filter{l}.weight",
                          uniform_init(rng, (d_l, d_l), d_l))
            b = Parameter(f"teacher.filter{l}.bias", np.zeros(d_l))
            self.filters.append((w, b))
        self.proj_w = Parameter("teacher.proj.weight",
                                uniform_init(rng, (d_l, d_k), d_l))
        self.proj_b = Parameter("teacher.proj.bias", np.zeros(d_k))
        self._pooled_cache: dict[tuple[int, int], np.ndarray] = {}

    def parameters(self) -> list[Parameter]:
        params = [p for pair in self.filters for p in pair]
        params.extend([self.proj_w, self.proj_b])
        return params

    def knowledge_filter(self, l: int, h: Tensor) -> Tensor:
        if l > self.store.k:
            raise ValueError(f"hop {l} exceeds filter count")
        w, b = self.filters[l]
        pre = ad.add(ad.matmul(h, w.tensor), b.tensor)
        act = ad.ACTIVATIONS[self.activation](pre)
        return ad.layer_norm(act)

    def project(self, h_hat: Tensor) -> Tensor:
        return ad.add(ad.matmul(h_hat, self.proj_w.tensor), self.proj_b.tensor)

    def pooled_matrix(self, nodes, hop: int) -> np.ndarray:
        rows = []
        for node in nodes:
            key = (int(node), hop)
            if key not in self._pooled_cache:
                self._pooled_cache[key] = pool_prompts(self.store, *key)
            rows.append(self._pooled_cache[key])
        return np.vstack(rows) if rows else np.zeros((0, self.store.d_l))

    def knowledge_for(self, nodes, hop: int) -> Tensor:
        """h_l^T for a batch of nodes: project(filter_l(pooled))."""
        pooled = Tensor(self.pooled_matrix(nodes, hop))
        return self.project(self.knowledge_filter(hop, pooled))


def build_teacher_knowledge(store: RawTeacherStore, nodes,
                            pipeline: TeacherPipeline) -> dict[int, np.ndarray]:
    """Materialized (non-taped) teacher knowledge per hop for inspection."""
    out: dict[int, np.ndarray] = {}
    with ad.no_grad():
        for l in range(store.k + 1):
            out[l] = pipeline.knowledge_for(nodes, l).data
    return out


def mock_teacher(g: TextAttributedGraph, k: int, theta: int, d_l: int,
                 signal: float, noise: float, seed: int) -> RawTeacherStore:
    """Deterministic stand-in for an LLM teacher.

    Hop-0 vectors carry the one-hot label scaled by ``signal``; hops l >= 1
    add half-strength label histograms of the exact hop-l frontier (written
    at offset C so the structural signal is separable from the label
    signal); every prompt copy gets independent Gaussian noise.
    """
    if signal < 0:
        raise ValueError("signal must be >= 0")
    C = g.num_classes
    if d_l < 2 * C:
        raise ValueError(f"d_L must be >= 2*C = {2 * C}")
    rng = np.random.default_rng(seed)
    entries: dict[tuple[int, int, int], np.ndarray] = {}
    for node in range(g.n):
        sub = khop_subgraph(g, node, k)
        onehot = np.zeros(d_l)
        onehot[g.labels[node]] = 1.0
        for l in range(k + 1):
            base = signal * onehot
            if l >= 1:
                frontier = sub.hop_frontiers[l]
                hist = np.zeros(d_l)
                if frontier:
                    counts = np.bincount(g.labels[frontier], minlength=C)
                    hist[C:2 * C] = counts / counts.sum()
                base = base + signal * 0.5 * hist
            for p in range(theta):
                entries[(node, l, p)] = base + noise * rng.standard_normal(d_l)
    return RawTeacherStore(d_l=d_l, entries=entries)
