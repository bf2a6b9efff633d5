"""Layer-adaptive contrastive distillation.

Per-hop InfoNCE between student and teacher vectors with category-aware
negative sampling, blended by trainable softmax weights over the hops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .optim import Parameter

SIMILARITIES = ("cosine", "dot")
DENOMINATOR_MODES = ("negatives_only", "with_positive")
GAMMA_MODES = ("trainable_softmax", "fixed_uniform")


@dataclass
class DistillConfig:
    t: float = 0.5
    n_negatives: int = 8
    similarity: str = "cosine"
    denominator_mode: str = "negatives_only"
    gamma_mode: str = "trainable_softmax"
    seed: int = 0

    def __post_init__(self):
        if self.t <= 0:
            raise ValueError("temperature must be positive")
        if self.n_negatives < 1:
            raise ValueError("need at least one negative")
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"similarity must be one of {SIMILARITIES}")
        if self.denominator_mode not in DENOMINATOR_MODES:
            raise ValueError(
                f"denominator_mode must be one of {DENOMINATOR_MODES}")
        if self.gamma_mode not in GAMMA_MODES:
            raise ValueError(f"gamma_mode must be one of {GAMMA_MODES}")


class LayerWeights:
    """Per-hop blending factors gamma_l, softmax-parametrized when trainable."""

    def __init__(self, k: int, mode: str = "trainable_softmax"):
        if mode not in GAMMA_MODES:
            raise ValueError(f"unknown gamma mode {mode!r}")
        self.k = k
        self.mode = mode
        self.logits = Parameter("distill.gamma_logits", np.zeros(k + 1))

    def parameters(self) -> list[Parameter]:
        return [self.logits] if self.mode == "trainable_softmax" else []

    def gamma(self) -> Tensor:
        if self.mode == "fixed_uniform":
            return Tensor(np.full(self.k + 1, 1.0 / (self.k + 1)))
        return ad.softmax(self.logits.tensor)

    def gamma_values(self) -> np.ndarray:
        with ad.no_grad():
            return self.gamma().data.copy()


def sample_negatives(batch: np.ndarray, labels: np.ndarray, anchor: int,
                     n: int, rng: np.random.Generator) -> np.ndarray | None:
    """N in-batch node ids with labels differing from the anchor's.

    Uniform with replacement over the eligible pool; returns None when no
    differing-label node exists (the anchor is skipped, not an error).
    """
    batch = np.asarray(batch)
    eligible = batch[labels[batch] != labels[anchor]]
    if eligible.size == 0:
        return None
    return eligible[rng.integers(0, eligible.size, size=n)]


def _similarity(a: Tensor, b: Tensor, kind: str) -> Tensor:
    if kind == "cosine":
        return ad.cosine_similarity(a, b)
    return ad.tsum(ad.mul(a, b), axis=-1)


def infonce_layer(h_s: Tensor, h_t: Tensor, h_t_neg: Tensor,
                  cfg: DistillConfig) -> Tensor:
    """Mean over anchors of the temperature-scaled contrastive loss.

    ``h_s``/``h_t``: (A, d) anchor student / teacher vectors;
    ``h_t_neg``: (A, N, d) per-anchor negative teacher vectors. In
    ``negatives_only`` mode the denominator sums the N negative terms only
    (the positive may exceed it, so the loss can go negative); in
    ``with_positive`` mode the positive term joins the denominator.
    """
    if h_s.shape[0] == 0:
        raise ValueError("infonce_layer requires at least one anchor")
    sim_pos = _similarity(h_s, h_t, cfg.similarity)              # (A,)
    anchors_exp = ad.reshape(h_s, (h_s.shape[0], 1, h_s.shape[1]))
    sim_neg = _similarity(anchors_exp, h_t_neg, cfg.similarity)  # (A, N)
    inv_t = 1.0 / cfg.t
    pos_logit = ad.scale(sim_pos, inv_t)
    neg_logits = ad.scale(sim_neg, inv_t)
    if cfg.denominator_mode == "with_positive":
        all_logits = ad.concat(
            [ad.reshape(pos_logit, (-1, 1)), neg_logits], axis=1)
    else:
        all_logits = neg_logits
    # log-sum-exp over the denominator terms, max-shifted for stability
    shift = Tensor(all_logits.data.max(axis=1, keepdims=True))
    lse = ad.log(ad.tsum(ad.exp(ad.sub(all_logits, shift)), axis=1))
    lse = ad.add(lse, ad.reshape(shift, (-1,)))
    per_anchor = ad.sub(lse, pos_logit)
    return ad.tmean(per_anchor)


def distill_loss(student_feats: list[Tensor], teacher_feats: list[Tensor],
                 neg_feats: list[Tensor], weights: LayerWeights,
                 cfg: DistillConfig) -> Tensor:
    """Weighted sum over hops: L_D = sum_l gamma_l * L_D^l.

    All three feature lists are indexed by hop 0..k and already restricted
    to the surviving anchors.
    """
    k = weights.k
    if not (len(student_feats) == len(teacher_feats) == len(neg_feats) == k + 1):
        raise ValueError("feature lists must cover hops 0..k")
    gamma = weights.gamma()
    total = None
    for l in range(k + 1):
        layer_loss = infonce_layer(student_feats[l], teacher_feats[l],
                                   neg_feats[l], cfg)
        g_l = ad.embedding_lookup(gamma, [l])
        term = ad.tsum(ad.mul(g_l, layer_loss))
        total = term if total is None else ad.add(total, term)
    return total
