"""Screening metrics from a confusion matrix (positive class = ASD)."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_pairs(cls, pairs) -> "ConfusionCounts":
        """Count ``(truth, predicted)`` pairs; any prediction other than the truth is an error."""
        tp = fp = tn = fn = 0
        for truth, pred in pairs:
            if truth == "ASD":
                if pred == "ASD":
                    tp += 1
                else:
                    fn += 1
            else:
                if pred == "TD":
                    tn += 1
                else:
                    fp += 1
        return cls(tp, fp, tn, fn)


def _ratio(num: int, den: int) -> Optional[Fraction]:
    return Fraction(num, den) if den else None


@dataclass(frozen=True)
class Metrics:
    """Exact ratios; ``None`` where the denominator is zero."""

    acc: Optional[Fraction]
    f1: Optional[Fraction]
    sn: Optional[Fraction]
    sp: Optional[Fraction]
    precision: Optional[Fraction]

    def percent(self, name: str) -> Optional[float]:
        v = getattr(self, name)
        return None if v is None else float(v * 100)

    def as_percentages(self) -> dict[str, Optional[float]]:
        return {k: self.percent(k) for k in ("acc", "f1", "sn", "sp")}


def compute_metrics(counts: ConfusionCounts) -> Metrics:
    if counts.total == 0:
        raise ValueError("no evaluated cases")
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    sn = _ratio(tp, tp + fn)
    prec = _ratio(tp, tp + fp)
    if sn is None or prec is None or sn + prec == 0:
        f1 = None
    else:
        f1 = 2 * prec * sn / (prec + sn)
    return Metrics(Fraction(tp + tn, counts.total), f1, sn, _ratio(tn, tn + fp), prec)


def metrics(counts: ConfusionCounts) -> tuple[Optional[float], Optional[float], Optional[float], Optional[float]]:
    """``(acc, f1, sn, sp)`` in percent; undefined ratios are ``None``."""
    m = compute_metrics(counts).as_percentages()
    return m["acc"], m["f1"], m["sn"], m["sp"]


def fmt_pct(v: Optional[float]) -> str:
    return "n/a" if v is None else f"{v:.2f}"
