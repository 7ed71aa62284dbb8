"""Spectrum classification, per-core majority voting, and metric reporting.

Metrics are one-vs-rest accuracy / specificity / sensitivity per class.
Undefined ratios (empty denominators) are reported as None alongside the
raw confusion counts rather than being coerced to zero: with four test
patients a silent zero would badly distort the picture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

__all__ = [
    "ConfusionCounts",
    "PatientPrediction",
    "classify_binary",
    "classify_subtype",
    "classify_spectrum",
    "patient_vote",
    "compute_metrics",
    "fold_mean_std",
    "MetricRow",
    "write_metrics_csv",
    "write_patient_table_csv",
]


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise DataError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float | None:
        return (self.tp + self.tn) / self.total if self.total else None

    @property
    def sensitivity(self) -> float | None:
        denom = self.tp + self.fn
        return self.tp / denom if denom else None

    @property
    def specificity(self) -> float | None:
        denom = self.tn + self.fp
        return self.tn / denom if denom else None


@dataclass
class PatientPrediction:
    patient_id: int
    vote_counts: np.ndarray
    final_class: int
    tie: bool


def classify_binary(probs: np.ndarray) -> np.ndarray:
    """Class 1 iff p >= 0.5 (boundary inclusive)."""
    probs = np.asarray(probs)
    return (probs >= 0.5).astype(np.int64)


def classify_subtype(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Argmax class per row; exact ties go to the lowest index and get flagged."""
    probs = np.atleast_2d(np.asarray(probs))
    classes = probs.argmax(axis=1)
    best = probs.max(axis=1, keepdims=True)
    ties = (probs == best).sum(axis=1) > 1
    return classes, ties


def classify_spectrum(output: np.ndarray, head: str):
    """Single-spectrum convenience wrapper; returns (class, tie_flag)."""
    if head not in ("type", "subtype"):
        raise DataError(f"unknown head {head!r}")
    out = np.asarray(output)
    if head == "type":
        p = float(out.reshape(-1)[0])
        return int(p >= 0.5), False
    classes, ties = classify_subtype(out.reshape(1, -1))
    return int(classes[0]), bool(ties[0])


def patient_vote(classes: np.ndarray, probs: np.ndarray, n_classes: int,
                 patient_id: int = -1) -> PatientPrediction:
    """Plurality vote over one sample's spectrum classes.

    Vote ties break on the higher mean predicted probability among the tied
    classes, then on the lower class index; either way the tie is flagged.
    For the binary head, probs is p(class 1) and p(class 0) is its complement.
    """
    classes = np.asarray(classes)
    if classes.size == 0:
        raise DataError("cannot vote over an empty spectrum list")
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        if n_classes != 2:
            raise DataError("1-D probabilities imply a binary head")
        probs = np.column_stack([1.0 - probs, probs])
    if probs.shape != (classes.size, n_classes):
        raise DataError("probability matrix does not match classes")

    counts = np.bincount(classes, minlength=n_classes)
    top = counts.max()
    tied = np.flatnonzero(counts == top)
    if tied.size == 1:
        return PatientPrediction(patient_id, counts, int(tied[0]), False)
    mean_p = probs[:, tied].mean(axis=0)
    winner = tied[int(mean_p.argmax())]  # argmax takes the lowest index on ties
    return PatientPrediction(patient_id, counts, int(winner), True)


def compute_metrics(predictions, truths, positive_class: int) -> ConfusionCounts:
    """One-vs-rest confusion counts for a class; metrics hang off the result."""
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape:
        raise DataError("predictions and truths must have equal length")
    pred_pos = predictions == positive_class
    true_pos = truths == positive_class
    return ConfusionCounts(
        tp=int(np.sum(pred_pos & true_pos)),
        fp=int(np.sum(pred_pos & ~true_pos)),
        tn=int(np.sum(~pred_pos & ~true_pos)),
        fn=int(np.sum(~pred_pos & true_pos)),
    )


def fold_mean_std(values: list[float | None]) -> tuple[float | None, float | None, int]:
    """Mean and population std over folds where the metric was defined."""
    defined = [v for v in values if v is not None]
    if not defined:
        return None, None, 0
    arr = np.asarray(defined, dtype=np.float64)
    return float(arr.mean()), float(arr.std()), len(defined)


@dataclass
class MetricRow:
    """One (set, label, class) row aggregated over folds."""

    set_name: str   # dev | test
    label: str      # type | subtype
    class_name: str
    granularity: str  # spectrum | patient
    accuracy: tuple[float | None, float | None, int]
    specificity: tuple[float | None, float | None, int]
    sensitivity: tuple[float | None, float | None, int]
    pooled: ConfusionCounts


def _fmt(stat: tuple[float | None, float | None, int]) -> tuple[str, str]:
    mean, std, _ = stat
    if mean is None:
        return "NA", "NA"
    return f"{mean:.6f}", f"{std:.6f}"


def write_metrics_csv(rows: list[MetricRow], path) -> None:
    header = ("set,label,class,granularity,"
              "accuracy_mean,accuracy_std,specificity_mean,specificity_std,"
              "sensitivity_mean,sensitivity_std,folds_defined,tp,fp,tn,fn\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header)
        for row in rows:
            acc = _fmt(row.accuracy)
            spec = _fmt(row.specificity)
            sens = _fmt(row.sensitivity)
            defined = min(row.accuracy[2], row.specificity[2], row.sensitivity[2])
            fh.write(
                f"{row.set_name},{row.label},{row.class_name},{row.granularity},"
                f"{acc[0]},{acc[1]},{spec[0]},{spec[1]},{sens[0]},{sens[1]},"
                f"{defined},{row.pooled.tp},{row.pooled.fp},{row.pooled.tn},{row.pooled.fn}\n"
            )


def write_patient_table_csv(table: list[dict], path) -> None:
    """Per test sample: ground truth vs the prediction of each fold model."""
    if not table:
        raise DataError("patient table is empty")
    n_folds = len(table[0]["predictions"])
    with open(path, "w", encoding="utf-8") as fh:
        fold_cols = ",".join(f"fold{i + 1}" for i in range(n_folds))
        fh.write(f"label,patient_id,core,ground_truth,{fold_cols}\n")
        for entry in table:
            preds = ",".join(str(p) for p in entry["predictions"])
            fh.write(f"{entry['label']},{entry['patient_id']},{entry['core']},"
                     f"{entry['ground_truth']},{preds}\n")
