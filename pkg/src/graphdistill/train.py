"""Joint training of classification and layer-adaptive distillation.

Handles the vanilla (no-teacher) baseline, per-epoch evaluation, best-val
checkpointing, and the last-layer-only ablation arm.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .distill import DistillConfig, LayerWeights, distill_loss, sample_negatives
from .graph import TextAttributedGraph
from .metrics import (EpochRecord, RunMetrics, accuracy, macro_f1,
                      per_class_report)
from .optim import AdamW, Parameter, uniform_init
from .student import StudentConfig, StudentGNN
from .teacher import RawTeacherStore, TeacherPipeline

LOSS_WEIGHT_MODES = ("fixed", "trainable_softmax_pair")
DISTILL_LAYER_MODES = ("all", "last")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the last good state."""

    def __init__(self, message: str, last_good: dict[str, np.ndarray],
                 metrics: RunMetrics):
        super().__init__(message)
        self.last_good = last_good
        self.metrics = metrics


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch: int = 32
    epochs: int = 500
    alpha: float = 1.0
    beta: float = 1.0
    loss_weight_mode: str = "fixed"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    distill: DistillConfig = field(default_factory=DistillConfig)
    distill_layers: str = "all"
    teacher_activation: str = "gelu"
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.loss_weight_mode not in LOSS_WEIGHT_MODES:
            raise ValueError(
                f"loss_weight_mode must be one of {LOSS_WEIGHT_MODES}")
        if self.distill_layers not in DISTILL_LAYER_MODES:
            raise ValueError(
                f"distill_layers must be one of {DISTILL_LAYER_MODES}")
        if self.loss_weight_mode == "fixed" and (self.alpha < 0 or self.beta < 0):
            raise ValueError("alpha and beta must be >= 0 in fixed mode")


class Classifier:
    """Fully connected softmax head over the last-hop student features."""

    def __init__(self, d_g: int, num_classes: int, rng: np.random.Generator):
        self.w = Parameter("classifier.weight",
                           uniform_init(rng, (d_g, num_classes), d_g))
        self.b = Parameter("classifier.bias", np.zeros(num_classes))

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]

    def probs(self, h: Tensor) -> Tensor:
        logits = ad.add(ad.matmul(h, self.w.tensor), self.b.tensor)
        return ad.softmax(logits)


def classify(h: Tensor, classifier: Classifier) -> Tensor:
    return classifier.probs(h)


def cross_entropy(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-probability of the true class, clamped at 1e-12."""
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.zeros(probs.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    picked = ad.tsum(ad.mul(probs, Tensor(onehot)), axis=-1)
    return ad.scale(ad.tmean(ad.log(ad.clamp_min(picked, 1e-12))), -1.0)


def _stratified_batches(train_ids: np.ndarray, labels: np.ndarray,
                        batch_size: int,
                        rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle within each class, interleave round-robin, then chunk."""
    pools = []
    for c in np.unique(labels[train_ids]):
        ids = train_ids[labels[train_ids] == c].copy()
        rng.shuffle(ids)
        pools.append(list(ids))
    order: list[int] = []
    while any(pools):
        for pool in pools:
            if pool:
                order.append(pool.pop())
    order_arr = np.array(order, dtype=np.int64)
    return [order_arr[i:i + batch_size]
            for i in range(0, len(order_arr), batch_size)]


@dataclass
class TrainState:
    """Everything built for one run: model, heads, optional teacher side."""

    student: StudentGNN
    classifier: Classifier
    teacher: Optional[TeacherPipeline]
    layer_weights: Optional[LayerWeights]
    ab_logits: Optional[Parameter]
    cfg: TrainConfig
    student_cfg: StudentConfig

    def trainable(self) -> list[Parameter]:
        params = self.student.parameters() + self.classifier.parameters()
        if self.teacher is not None:
            params += self.teacher.parameters()
        if self.layer_weights is not None:
            params += self.layer_weights.parameters()
        if self.ab_logits is not None:
            params.append(self.ab_logits)
        return params

    def alpha_beta(self) -> tuple[float, float]:
        if self.ab_logits is None:
            return self.cfg.alpha, self.cfg.beta
        with ad.no_grad():
            ab = ad.softmax(self.ab_logits.tensor).data
        return float(ab[0]), float(ab[1])

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.trainable()}

    def restore(self, tensors: dict[str, np.ndarray]) -> None:
        for p in self.trainable():
            p.tensor.data[...] = tensors[p.name]

    def meta(self) -> dict:
        return {
            "arch": self.student_cfg.arch,
            "k": self.student_cfg.k,
            "d_g": self.student_cfg.d_g,
            "d_in": self.student.g.d_in,
            "num_classes": self.student.g.num_classes,
            "distilled": self.teacher is not None,
        }


def build_state(g: TextAttributedGraph, teacher_store: Optional[RawTeacherStore],
                student_cfg: StudentConfig, cfg: TrainConfig) -> TrainState:
    """Construct model state with seed streams that keep the student
    initialization independent of teacher presence."""
    ss = np.random.SeedSequence(cfg.seed)
    s_student, s_classifier, s_teacher, s_extra = ss.spawn(4)
    student = StudentGNN(g, student_cfg, np.random.default_rng(s_student))
    classifier = Classifier(student_cfg.d_g, g.num_classes,
                            np.random.default_rng(s_classifier))
    distilling = teacher_store is not None and cfg.beta != 0.0
    teacher = None
    layer_weights = None
    if distilling:
        if teacher_store.k < student_cfg.k:
            raise ValueError(
                f"teacher store covers hops 0..{teacher_store.k} but the "
                f"student has k={student_cfg.k}")
        teacher = TeacherPipeline(teacher_store, student_cfg.d_g,
                                  np.random.default_rng(s_teacher),
                                  activation=cfg.teacher_activation)
        layer_weights = LayerWeights(student_cfg.k, cfg.distill.gamma_mode)
    ab_logits = None
    if cfg.loss_weight_mode == "trainable_softmax_pair":
        ab_logits = Parameter("loss.ab_logits", np.zeros(2))
    return TrainState(student=student, classifier=classifier, teacher=teacher,
                      layer_weights=layer_weights, ab_logits=ab_logits,
                      cfg=cfg, student_cfg=student_cfg)


def _predictions(state: TrainState) -> np.ndarray:
    with ad.no_grad():
        feats = state.student.forward()
        probs = state.classifier.probs(feats[-1])
    return probs.data.argmax(axis=1)


def _eval_splits(state: TrainState, g: TextAttributedGraph):
    pred = _predictions(state)
    out = {}
    for split in ("val", "test"):
        ids = g.split_ids(split)
        out[split] = (accuracy(pred[ids], g.labels[ids]),
                      macro_f1(pred[ids], g.labels[ids], g.num_classes))
    return out


def _distill_term(state: TrainState, feats: list[Tensor],
                  batch: np.ndarray, g: TextAttributedGraph,
                  neg_rng: np.random.Generator) -> Optional[Tensor]:
    cfg = state.cfg
    k = state.student_cfg.k
    anchors, negatives = [], []
    for node in batch:
        neg = sample_negatives(batch, g.labels, int(node),
                               cfg.distill.n_negatives, neg_rng)
        if neg is not None:
            anchors.append(int(node))
            negatives.append(neg)
    if not anchors:
        return None
    anchors_arr = np.array(anchors, dtype=np.int64)
    neg_flat = np.concatenate(negatives)
    n_neg = cfg.distill.n_negatives

    hops = range(k + 1) if cfg.distill_layers == "all" else [k]
    student_feats, teacher_feats, neg_feats = [], [], []
    for l in hops:
        student_feats.append(ad.embedding_lookup(feats[l], anchors_arr))
        teacher_feats.append(state.teacher.knowledge_for(anchors_arr, l))
        neg_t = state.teacher.knowledge_for(neg_flat, l)
        neg_feats.append(ad.reshape(
            neg_t, (len(anchors), n_neg, state.student_cfg.d_g)))

    if cfg.distill_layers == "last":
        # ablation arm: align the final hop only, unit weight
        from .distill import infonce_layer
        return infonce_layer(student_feats[0], teacher_feats[0],
                             neg_feats[0], cfg.distill)
    return distill_loss(student_feats, teacher_feats, neg_feats,
                        state.layer_weights, cfg.distill)


def train(g: TextAttributedGraph, teacher_store: Optional[RawTeacherStore],
          student_cfg: StudentConfig, cfg: TrainConfig) -> tuple[TrainState, RunMetrics, dict[str, np.ndarray]]:
    """Run the optimization loop.

    Returns (state, metrics, best_tensors) where best_tensors is the
    parameter snapshot at the best validation accuracy (earliest epoch on
    ties). Raises :class:`DivergenceError` on a non-finite loss.
    """
    state = build_state(g, teacher_store, student_cfg, cfg)
    opt = AdamW(state.trainable(), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps,
                weight_decay=cfg.weight_decay)
    ss = np.random.SeedSequence(cfg.seed)
    # re-spawn children 0..3 deterministically, then take batching stream
    batch_rng = np.random.default_rng(ss.spawn(5)[4])
    train_ids = g.split_ids("train")
    metrics = RunMetrics(k=student_cfg.k)
    best_tensors = state.snapshot()
    best_val, best_epoch = -1.0, -1
    distilling = state.teacher is not None

    features = Tensor(g.features)
    step_counter = 0
    for epoch in range(1, cfg.epochs + 1):
        batches = _stratified_batches(train_ids, g.labels, cfg.batch, batch_rng)
        sums = {"total": 0.0, "cls": 0.0, "distill": 0.0}
        try:
            for batch in batches:
                feats = state.student.forward(features)
                probs = state.classifier.probs(
                    ad.embedding_lookup(feats[-1], batch))
                loss_cls = cross_entropy(probs, g.labels[batch])
                alpha, beta = cfg.alpha, cfg.beta
                loss_d = None
                if distilling:
                    neg_rng = np.random.default_rng(
                        np.random.SeedSequence(
                            entropy=cfg.seed,
                            spawn_key=(epoch, step_counter)))
                    loss_d = _distill_term(state, feats, batch, g, neg_rng)
                if state.ab_logits is not None:
                    ab = ad.softmax(state.ab_logits.tensor)
                    loss = ad.tsum(ad.mul(ad.embedding_lookup(ab, [0]), loss_cls))
                    if loss_d is not None:
                        loss = ad.add(loss, ad.tsum(
                            ad.mul(ad.embedding_lookup(ab, [1]), loss_d)))
                else:
                    loss = ad.scale(loss_cls, alpha)
                    if loss_d is not None:
                        loss = ad.add(loss, ad.scale(loss_d, beta))
                if not np.isfinite(loss.data):
                    raise NumericError("non-finite total loss")
                ad.backward(loss)
                opt.step()
                step_counter += 1
                sums["total"] += loss.item()
                sums["cls"] += loss_cls.item()
                sums["distill"] += loss_d.item() if loss_d is not None else 0.0
        except NumericError as exc:
            ad.clear_tape()
            raise DivergenceError(
                f"training diverged at epoch {epoch}: {exc}",
                last_good=best_tensors, metrics=metrics) from exc

        n_steps = max(len(batches), 1)
        ev = _eval_splits(state, g)
        gamma = (state.layer_weights.gamma_values().tolist()
                 if state.layer_weights is not None
                 else [1.0 / (student_cfg.k + 1)] * (student_cfg.k + 1))
        alpha, beta = state.alpha_beta()
        if not distilling:
            beta = 0.0
        metrics.append(EpochRecord(
            epoch=epoch, loss_total=sums["total"] / n_steps,
            loss_cls=sums["cls"] / n_steps,
            loss_distill=sums["distill"] / n_steps,
            val_acc=ev["val"][0], val_f1=ev["val"][1],
            test_acc=ev["test"][0], test_f1=ev["test"][1],
            gamma=gamma, alpha=alpha, beta=beta))
        if ev["val"][0] > best_val:
            best_val, best_epoch = ev["val"][0], epoch
            best_tensors = state.snapshot()

    metrics.best_epoch = best_epoch
    metrics.best_val_acc = best_val
    return state, metrics, best_tensors


def save_state(path, tensors: dict[str, np.ndarray], state: TrainState) -> None:
    save_checkpoint(path, tensors, meta=state.meta())


def evaluate_checkpoint(g: TextAttributedGraph, checkpoint_path,
                        split: str) -> dict:
    """Load a checkpoint and score one split: accuracy, macro-F1, report."""
    tensors, meta = load_checkpoint(checkpoint_path)
    ids = g.split_ids(split)
    if ids.size == 0:
        raise ValueError(f"split {split!r} is empty")
    student_cfg = StudentConfig(arch=meta["arch"], k=meta["k"],
                                d_g=meta["d_g"])
    student = StudentGNN(g, student_cfg, np.random.default_rng(0))
    classifier = Classifier(meta["d_g"], meta["num_classes"],
                            np.random.default_rng(0))
    for p in student.parameters() + classifier.parameters():
        p.tensor.data[...] = tensors[p.name]
    with ad.no_grad():
        feats = student.forward()
        probs = classifier.probs(feats[-1])
    pred = probs.data.argmax(axis=1)
    return {
        "accuracy": accuracy(pred[ids], g.labels[ids]),
        "macro_f1": macro_f1(pred[ids], g.labels[ids], g.num_classes),
        "report": per_class_report(pred[ids], g.labels[ids], g.num_classes),
    }


def ablation_last_layer(g: TextAttributedGraph, teacher_store: RawTeacherStore,
                        student_cfg: StudentConfig,
                        cfg: TrainConfig) -> tuple[RunMetrics, RunMetrics]:
    """Full layer-adaptive distillation vs last-hop-only, same seed."""
    full_cfg = replace(cfg, distill_layers="all")
    last_cfg = replace(cfg, distill_layers="last")
    _, full_metrics, _ = train(g, teacher_store, student_cfg, full_cfg)
    _, last_metrics, _ = train(g, teacher_store, student_cfg, last_cfg)
    return full_metrics, last_metrics
