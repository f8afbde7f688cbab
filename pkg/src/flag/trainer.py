"""Temporal splitting, training with validation-based selection, and metrics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from flag.model import Adam, Model, ModelConfig, backward, cross_entropy

log = logging.getLogger(__name__)


class SplitError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    test_year_start: int = 2019
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")


@dataclass
class DatasetSplit:
    """Each split is a list of ``(doc_id, label)``."""

    train: List[Tuple[str, int]]
    validation: List[Tuple[str, int]]
    test: List[Tuple[str, int]]
    spec: SplitSpec


def make_split(manifest, labels, spec: SplitSpec) -> DatasetSplit:
    """Calls dated in or after ``spec.test_year_start`` form the test set; the
    rest are shuffled with ``spec.seed`` and the last ``val_fraction`` of them
    become validation.  Unlabelled manifest entries are skipped."""
    test, rest = [], []
    for rec in sorted(manifest, key=lambda r: r.doc_id):
        if rec.doc_id not in labels:
            continue
        item = (rec.doc_id, int(labels[rec.doc_id]))
        (test if rec.call_date.year >= spec.test_year_start else rest).append(item)
    order = np.random.default_rng(spec.seed).permutation(len(rest))
    rest = [rest[i] for i in order]
    n_val = int(round(len(rest) * spec.val_fraction))
    split = DatasetSplit(rest[:len(rest) - n_val], rest[len(rest) - n_val:], test, spec)
    for name in ("train", "validation", "test"):
        if not getattr(split, name):
            raise SplitError(f"{name} split is empty")
    return split


@dataclass
class TrainConfig:
    epochs_max: int = 20
    lr: float = 1e-5
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    selection: str = "loss"

    def __post_init__(self):
        if self.epochs_max < 1:
            raise ValueError("epochs_max must be >= 1")
        if self.selection not in ("loss", "error"):
            raise ValueError("selection must be 'loss' or 'error'")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_error: float


@dataclass
class TrainResult:
    model: Model
    best_epoch: int
    log: List[EpochRecord]

    def log_lines(self):
        return [json.dumps(asdict(r)) for r in self.log]


def dataset_loss(model, dataset):
    """Mean cross-entropy and error rate of ``model`` over ``[(graph, label), ...]``."""
    total, wrong = 0.0, 0
    for graph, label in dataset:
        logits, _ = model.forward(graph, requires_grad=False)
        total += float(cross_entropy(logits, label).data)
        wrong += int(np.argmax(logits.data) != label)
    return total / len(dataset), wrong / len(dataset)


def train(train_set, val_set, config: TrainConfig, initial: Optional[Model] = None) -> TrainResult:
    """Per-document Adam steps; keeps the epoch with the best validation score.

    ``train_set`` and ``val_set`` are lists of ``(DocumentGraph, label)``.
    """
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be non-empty")
    model = initial.copy() if initial is not None else Model(config.model)
    opt = Adam(model.params, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    best, best_score, best_epoch = None, math.inf, 0
    history = []
    for epoch in range(1, config.epochs_max + 1):
        losses, correct = [], 0
        for i in rng.permutation(len(train_set)):
            graph, label = train_set[i]
            logits, trace = model.forward(graph)
            loss = cross_entropy(logits, label)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss on document {graph.doc_id!r} in epoch {epoch}")
            correct += int(np.argmax(logits.data) == label)
            losses.append(value)
            try:
                opt.step(backward(trace, loss))
            except FloatingPointError as exc:
                raise TrainingError(f"document {graph.doc_id!r}, epoch {epoch}: {exc}") from None
        val_loss, val_error = dataset_loss(model, val_set)
        rec = EpochRecord(epoch, float(np.mean(losses)), correct / len(train_set), val_loss, val_error)
        history.append(rec)
        log.info("epoch %d train_loss %.6f train_acc %.3f val_loss %.6f val_err %.3f",
                 epoch, rec.train_loss, rec.train_accuracy, val_loss, val_error)
        score = val_loss if config.selection == "loss" else (val_error, val_loss)
        if best is None or score < best_score:
            best, best_score, best_epoch = model.copy(), score, epoch
    return TrainResult(best, best_epoch, history)


# -- evaluation ------------------------------------------------------------


@dataclass
class EvalReport:
    confusion: List[List[int]]  # confusion[true][pred]
    accuracy: float
    macro_precision: float
    macro_recall: float
    f1: float
    precision: List[float] = field(default_factory=list)
    recall: List[float] = field(default_factory=list)
    class_f1: List[float] = field(default_factory=list)

    @property
    def n(self):
        return int(sum(map(sum, self.confusion)))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _ratio(num, den):
    return num / den if den else 0.0


def report_from_predictions(y_true, y_pred, n_classes=2) -> EvalReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if len(y_true) == 0 or len(y_true) != len(y_pred):
        raise ValueError("need equal-length, non-empty label vectors")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return report_from_confusion(cm)


def report_from_confusion(cm) -> EvalReport:
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm)
    precision = [_ratio(tp[c], cm[:, c].sum()) for c in range(len(cm))]
    recall = [_ratio(tp[c], cm[c, :].sum()) for c in range(len(cm))]
    f1 = [_ratio(2 * p * r, p + r) for p, r in zip(precision, recall)]
    return EvalReport(
        confusion=cm.tolist(),
        accuracy=_ratio(tp.sum(), cm.sum()),
        macro_precision=float(np.mean(precision)),
        macro_recall=float(np.mean(recall)),
        f1=float(np.mean(f1)),
        precision=[float(p) for p in precision],
        recall=[float(r) for r in recall],
        class_f1=[float(f) for f in f1],
    )


def predict(model, graph):
    logits, _ = model.forward(graph, requires_grad=False)
    return int(np.argmax(logits.data))


def evaluate(model, dataset) -> EvalReport:
    """Argmax predictions over ``[(graph, label), ...]`` scored with macro averages."""
    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    y_true = [label for _, label in dataset]
    y_pred = [predict(model, g) for g, _ in dataset]
    return report_from_predictions(y_true, y_pred, model.config.n_classes)


def format_report_table(rows):
    """``[(name, EvalReport), ...]`` as an aligned text table, 3 decimals."""
    width = max([len("Method")] + [len(name) for name, _ in rows])
    lines = [f"{'Method':<{width}}  {'Accuracy':>8}  {'Precision':>9}  {'Recall':>6}  {'F1':>5}"]
    for name, r in rows:
        lines.append(f"{name:<{width}}  {r.accuracy:>8.3f}  {r.macro_precision:>9.3f}  "
                     f"{r.macro_recall:>6.3f}  {r.f1:>5.3f}")
    return "\n".join(lines) + "\n"


def emit_report(report, path_stem, name="FLAG"):
    """Write ``<stem>.json`` and ``<stem>.txt``; returns both paths."""
    json_path, txt_path = f"{path_stem}.json", f"{path_stem}.txt"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write(format_report_table([(name, report)]))
    return json_path, txt_path
