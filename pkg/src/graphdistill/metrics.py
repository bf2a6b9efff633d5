"""Classification metrics and the per-epoch metrics CSV."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def accuracy(pred: np.ndarray, true: np.ndarray) -> float:
    if pred.size == 0:
        raise ValueError("empty prediction set")
    return float(np.mean(pred == true))


def macro_f1(pred: np.ndarray, true: np.ndarray, num_classes: int) -> float:
    """Unweighted mean of per-class F1; empty/undefined classes count as 0."""
    f1s = []
    for c in range(num_classes):
        tp = int(np.sum((pred == c) & (true == c)))
        fp = int(np.sum((pred == c) & (true != c)))
        fn = int(np.sum((pred != c) & (true == c)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(f1s))


def per_class_report(pred: np.ndarray, true: np.ndarray,
                     num_classes: int) -> list[dict]:
    report = []
    for c in range(num_classes):
        tp = int(np.sum((pred == c) & (true == c)))
        fp = int(np.sum((pred == c) & (true != c)))
        fn = int(np.sum((pred != c) & (true == c)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) \
            if precision + recall else 0.0
        report.append({"class": c, "support": int(np.sum(true == c)),
                       "precision": precision, "recall": recall, "f1": f1})
    return report


@dataclass
class EpochRecord:
    epoch: int
    loss_total: float
    loss_cls: float
    loss_distill: float
    val_acc: float
    val_f1: float
    test_acc: float
    test_f1: float
    gamma: list[float]
    alpha: float
    beta: float


@dataclass
class RunMetrics:
    k: int
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = -1.0

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("epoch indices must be strictly increasing")
        self.records.append(rec)

    def epochs_to_threshold(self, target_val_acc: float) -> int | None:
        """First epoch whose validation accuracy reaches the target."""
        for rec in self.records:
            if rec.val_acc >= target_val_acc:
                return rec.epoch
        return None

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    def header(self) -> list[str]:
        gammas = [f"gamma_{l}" for l in range(self.k + 1)]
        return (["epoch", "loss_total", "loss_cls", "loss_distill",
                 "val_acc", "val_f1", "test_acc", "test_f1"]
                + gammas + ["alpha", "beta"])

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            for r in self.records:
                writer.writerow(
                    [r.epoch, f"{r.loss_total:.10g}", f"{r.loss_cls:.10g}",
                     f"{r.loss_distill:.10g}", f"{r.val_acc:.10g}",
                     f"{r.val_f1:.10g}", f"{r.test_acc:.10g}",
                     f"{r.test_f1:.10g}"]
                    + [f"{gv:.10g}" for gv in r.gamma]
                    + [f"{r.alpha:.10g}", f"{r.beta:.10g}"])


def read_metrics_csv(path: str | Path) -> RunMetrics:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        gamma_cols = [h for h in header if h.startswith("gamma_")]
        rm = RunMetrics(k=len(gamma_cols) - 1)
        idx = {name: i for i, name in enumerate(header)}
        for row in reader:
            rec = EpochRecord(
                epoch=int(row[idx["epoch"]]),
                loss_total=float(row[idx["loss_total"]]),
                loss_cls=float(row[idx["loss_cls"]]),
                loss_distill=float(row[idx["loss_distill"]]),
                val_acc=float(row[idx["val_acc"]]),
                val_f1=float(row[idx["val_f1"]]),
                test_acc=float(row[idx["test_acc"]]),
                test_f1=float(row[idx["test_f1"]]),
                gamma=[float(row[idx[c]]) for c in gamma_cols],
                alpha=float(row[idx["alpha"]]),
                beta=float(row[idx["beta"]]),
            )
            rm.append(rec)
    best = max(range(len(rm.records)),
               key=lambda i: (rm.records[i].val_acc, -rm.records[i].epoch),
               default=None)
    if best is not None:
        rm.best_epoch = rm.records[best].epoch
        rm.best_val_acc = rm.records[best].val_acc
    return rm
