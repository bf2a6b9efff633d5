"""Message-passing student networks (GCN, GraphSAGE, GIN).

Full-graph transductive forward returning one normalized feature matrix per
hop, matching the distillation space width d_k = d_G.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .graph import TextAttributedGraph
from .optim import Parameter, uniform_init

ARCHS = ("gcn", "sage", "gin")


@dataclass
class StudentConfig:
    arch: str = "gcn"
    k: int = 2
    d_in: int = 0
    d_g: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.d_g <= 0:
            raise ValueError("d_G must be positive")


def _adjacency_matrices(g: TextAttributedGraph):
    """(gcn_norm, mean_nb, sum_nb) sparse operators for the three archs."""
    n = g.n
    if g.edges:
        rows, cols = zip(*g.edges)
        rows, cols = np.array(rows), np.array(cols)
        data = np.ones(len(rows))
        adj = sp.coo_matrix((data, (rows, cols)), shape=(n, n))
        adj = adj + adj.T
    else:
        adj = sp.coo_matrix((n, n))
    adj = adj.tocsr()

    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg + 1.0)
    adj_self = adj + sp.eye(n, format="csr")
    gcn_norm = sp.diags(inv_sqrt) @ adj_self @ sp.diags(inv_sqrt)

    inv_deg = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    mean_nb = sp.diags(inv_deg) @ adj
    return gcn_norm.tocsr(), mean_nb.tocsr(), adj


class StudentGNN:
    """One of the three message-passing students over a fixed graph."""

    def __init__(self, g: TextAttributedGraph, cfg: StudentConfig,
                 rng: np.random.Generator):
        if cfg.d_in and cfg.d_in != g.d_in:
            raise ValueError(f"configured d_in {cfg.d_in} != graph d_in {g.d_in}")
        self.cfg = cfg
        self.g = g
        self.gcn_norm, self.mean_nb, self.sum_nb = _adjacency_matrices(g)
        d_in, d, k = g.d_in, cfg.d_g, cfg.k

        self.emb_w = Parameter("student.embed.weight",
                               uniform_init(rng, (d_in, d), d_in))
        self.emb_b = Parameter("student.embed.bias", np.zeros(d))
        self.layers: list[dict[str, Parameter]] = []
        for l in range(1, k + 1):
            layer: dict[str, Parameter] = {}
            if cfg.arch == "gcn":
                layer["w"] = Parameter(f"student.layer{l}.weight",
                                       uniform_init(rng, (d, d), d))
                layer["b"] = Parameter(f"student.layer{l}.bias", np.zeros(d))
            elif cfg.arch == "sage":
                layer["w"] = Parameter(f"student.layer{l}.weight",
                                       uniform_init(rng, (2 * d, d), 2 * d))
                layer["b"] = Parameter(f"student.layer{l}.bias", np.zeros(d))
            else:  # gin: two-layer MLP plus trainable epsilon
                layer["w1"] = Parameter(f"student.layer{l}.mlp1.weight",
                                        uniform_init(rng, (d, d), d))
                layer["b1"] = Parameter(f"student.layer{l}.mlp1.bias", np.zeros(d))
                layer["w2"] = Parameter(f"student.layer{l}.mlp2.weight",
                                        uniform_init(rng, (d, d), d))
                layer["b2"] = Parameter(f"student.layer{l}.mlp2.bias", np.zeros(d))
                layer["eps"] = Parameter(f"student.layer{l}.eps", np.zeros(()))
            self.layers.append(layer)

    def parameters(self) -> list[Parameter]:
        params = [self.emb_w, self.emb_b]
        for layer in self.layers:
            params.extend(layer.values())
        return params

    def embed(self, features: Tensor) -> Tensor:
        return ad.add(ad.matmul(features, self.emb_w.tensor), self.emb_b.tensor)

    def message_pass(self, l: int, h: Tensor) -> Tensor:
        layer = self.layers[l - 1]
        arch = self.cfg.arch
        if arch == "gcn":
            agg = ad.spmm(self.gcn_norm, h)
            return ad.relu(ad.add(ad.matmul(agg, layer["w"].tensor),
                                  layer["b"].tensor))
        if arch == "sage":
            nb = ad.spmm(self.mean_nb, h)  # zero vector for isolated nodes
            cat = ad.concat([h, nb], axis=-1)
            return ad.relu(ad.add(ad.matmul(cat, layer["w"].tensor),
                                  layer["b"].tensor))
        # gin
        nb = ad.spmm(self.sum_nb, h)
        eps = layer["eps"].tensor
        scaled_self = ad.add(h, ad.mul(h, eps))  # (1 + eps) * h
        combined = ad.add(scaled_self, nb)
        hidden = ad.relu(ad.add(ad.matmul(combined, layer["w1"].tensor),
                                layer["b1"].tensor))
        return ad.add(ad.matmul(hidden, layer["w2"].tensor), layer["b2"].tensor)

    def forward(self, features: Tensor | None = None) -> list[Tensor]:
        """Normalized per-hop features h_0^S .. h_k^S for every node."""
        if features is None:
            features = Tensor(self.g.features)
        h = self.embed(features)
        per_hop = [ad.layer_norm(h)]
        for l in range(1, self.cfg.k + 1):
            h = self.message_pass(l, h)
            per_hop.append(ad.layer_norm(h))
        return per_hop


def normalize_to_distill(h: Tensor) -> Tensor:
    """Parameter-free standardization into the shared distillation space."""
    return ad.layer_norm(h)
