"""Evaluation metrics: binary rates, ROC / EER / FPR@TPR / AUC, keyword reports.

A score ``s`` is called positive at threshold ``t`` iff ``s >= t``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .lattice import NBestList
from .parsing import ParsedPrediction
from .prompting import KEYWORDS, LABELS, OOV


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredExample:
    utterance_id: str
    score: float
    gold: int


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in self.points:
            w.writerow([repr(t) if math.isfinite(t) else "inf", repr(f), repr(p)])
        return buf.getvalue()


@dataclass
class EvalReport:
    tpr: float | None = None
    fpr: float | None = None
    eer: float | None = None
    fpr_at_tpr95: float | None = None
    auc: float | None = None
    per_keyword: dict[str, dict[str, float | None]] | None = None
    total_accuracy: float | None = None
    descriptive_fraction: float = 0.0
    n_utterances: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "tpr": self.tpr,
            "fpr": self.fpr,
            "eer": self.eer,
            "fpr_at_tpr95": self.fpr_at_tpr95,
            "auc": self.auc,
            "per_keyword": self.per_keyword,
            "total_accuracy": self.total_accuracy,
            "descriptive_fraction": self.descriptive_fraction,
            "n_utterances": self.n_utterances,
        }
        d.update(self.extra)
        return d


def _arrays(examples: Sequence[ScoredExample]) -> tuple[np.ndarray, np.ndarray]:
    scores = np.array([e.score for e in examples], dtype=np.float64)
    golds = np.array([e.gold for e in examples], dtype=np.int64)
    if not np.all(np.isfinite(scores)):
        raise MetricError("scores must be finite")
    if np.any((golds != 0) & (golds != 1)):
        raise MetricError("gold labels must be 0 or 1")
    if golds.sum() == 0 or golds.sum() == golds.size:
        raise MetricError("both positive and negative gold labels are required")
    return scores, golds


def binary_rates(examples: Sequence[ScoredExample]) -> tuple[float, float]:
    """(TPR, FPR) of hard 0/1 predictions."""
    scores, golds = _arrays(examples)
    pred = scores >= 0.5
    pos = golds == 1
    tpr = float(np.sum(pred & pos) / np.sum(pos))
    fpr = float(np.sum(pred & ~pos) / np.sum(~pos))
    return tpr, fpr


def roc_curve(examples: Sequence[ScoredExample]) -> RocCurve:
    scores, golds = _arrays(examples)
    thr, tp, fp = kernels.roc_counts(scores, golds)
    P = golds.sum()
    N = golds.size - P
    return RocCurve(
        thresholds=np.concatenate([[np.inf], thr]),
        fpr=np.concatenate([[0.0], fp / N]),
        tpr=np.concatenate([[0.0], tp / P]),
    )


def eer(curve: RocCurve) -> float:
    """Equal error rate: where FPR meets 1 - TPR, linearly interpolated."""
    f, t = curve.fpr, curve.tpr
    d = f + t - 1.0
    i = int(np.argmax(d >= 0))  # d ends at +1, so a crossing exists
    if d[i] == 0 or i == 0:
        return float(f[i])
    a = -d[i - 1] / (d[i] - d[i - 1])
    return float(f[i - 1] + a * (f[i] - f[i - 1]))


def fpr_at_tpr(curve: RocCurve, target_tpr: float = 0.95, interpolate: bool = True) -> float:
    """Lowest FPR reaching ``target_tpr``.

    With ``interpolate=False`` only actual operating points count.
    """
    if not 0.0 < target_tpr <= 1.0:
        raise MetricError("target_tpr must be in (0, 1]")
    f, t = curve.fpr, curve.tpr
    i = int(np.argmax(t >= target_tpr))
    if t[i] == target_tpr or not interpolate or i == 0:
        return float(f[i])
    a = (target_tpr - t[i - 1]) / (t[i] - t[i - 1])
    return float(f[i - 1] + a * (f[i] - f[i - 1]))


def auc(curve: RocCurve) -> float:
    f, t = curve.fpr, curve.tpr
    return float(np.sum((f[1:] - f[:-1]) * (t[1:] + t[:-1]) / 2.0))


def keyword_report(preds: Iterable[ParsedPrediction], golds: Mapping[str, str]) -> EvalReport:
    """Per-label precision/recall and total accuracy over the 11 KS labels.

    Undefined ratios (no predictions / no golds for a label) are ``None``.
    """
    preds = list(preds)
    tp = dict.fromkeys(LABELS, 0)
    n_pred = dict.fromkeys(LABELS, 0)
    n_gold = dict.fromkeys(LABELS, 0)
    correct = 0
    for p in preds:
        if p.utterance_id not in golds:
            raise MetricError(f"no gold label for utterance {p.utterance_id!r}")
        g = golds[p.utterance_id]
        for lab in (p.keyword, g):
            if lab not in tp:
                raise MetricError(f"label {lab!r} outside the keyword set")
        n_pred[p.keyword] += 1
        n_gold[g] += 1
        if p.keyword == g:
            tp[g] += 1
            correct += 1
    per = {
        lab: {
            "precision": tp[lab] / n_pred[lab] if n_pred[lab] else None,
            "recall": tp[lab] / n_gold[lab] if n_gold[lab] else None,
        }
        for lab in LABELS
    }
    return EvalReport(
        per_keyword=per,
        total_accuracy=correct / len(preds) if preds else None,
        n_utterances=len(preds),
    )


def ks_baseline(nbest: NBestList) -> str:
    """Keyword if the 1-best is exactly one command word, else OOV."""
    words = nbest.best.words
    if len(words) == 1 and words[0].lower() in KEYWORDS:
        return words[0].lower()
    return OOV
