"""Empirical group-fairness gaps for binary classifiers.

Three gaps over a binary protected attribute g in {a, b}:

* ``sp``   -- statistical parity: |selection rate a - selection rate b|
* ``eqop`` -- equality of opportunity: |TPR a - TPR b|
* ``eo``   -- equalized odds: max(|TPR a - TPR b|, |FPR a - FPR b|)

A gap is *undefined* (returned as ``None``) when a required denominator is
empty: the group count for sp, the per-group label-1 count for eqop, and
additionally the label-0 count for eo. Returning 0 instead would report
perfect fairness for degenerate inputs, so callers must handle ``None``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from .errors import ValidationError

GROUP_A = 0
GROUP_B = 1
GROUP_NAMES = ("a", "b")


class FairnessMetric(str, Enum):
    SP = "sp"
    EQOP = "eqop"
    EO = "eo"


MetricLike = Union[FairnessMetric, str]


def coerce_metric(metric: MetricLike) -> FairnessMetric:
    if isinstance(metric, FairnessMetric):
        return metric
    try:
        return FairnessMetric(str(metric).lower())
    except ValueError:
        raise ValidationError(
            f"unknown fairness metric {metric!r}; expected one of "
            f"{[m.value for m in FairnessMetric]}"
        ) from None


@dataclass(frozen=True)
class GroupCounts:
    """Raw per-group tallies from which all rates derive."""

    count: int
    predicted_positive: int
    true_positive: int
    false_positive: int
    label1: int
    label0: int

    @property
    def selection_rate(self) -> Optional[float]:
        return self.predicted_positive / self.count if self.count else None

    @property
    def tpr(self) -> Optional[float]:
        return self.true_positive / self.label1 if self.label1 else None

    @property
    def fpr(self) -> Optional[float]:
        return self.false_positive / self.label0 if self.label0 else None


@dataclass(frozen=True)
class GroupRates:
    a: GroupCounts
    b: GroupCounts


def _as_group_array(groups: np.ndarray) -> np.ndarray:
    arr = np.asarray(groups)
    if arr.dtype.kind in "UO":  # 'a'/'b' strings
        mapped = np.full(arr.shape, -1, dtype=np.int64)
        mapped[arr == "a"] = GROUP_A
        mapped[arr == "b"] = GROUP_B
        if (mapped < 0).any():
            bad = arr[mapped < 0][0]
            raise ValidationError(f"group values must be 'a' or 'b', got {bad!r}")
        return mapped
    arr = arr.astype(np.int64)
    if not np.isin(arr, (GROUP_A, GROUP_B)).all():
        raise ValidationError("group codes must be 0 (a) or 1 (b)")
    return arr


def _as_binary(name: str, values: np.ndarray) -> np.ndarray:
    arr = np.asarray(values).astype(np.int64)
    if not np.isin(arr, (0, 1)).all():
        raise ValidationError(f"{name} must be binary 0/1")
    return arr


def group_rates(predictions, labels, groups) -> GroupRates:
    """Tally per-group counts from aligned prediction/label/group vectors."""
    preds = _as_binary("predictions", predictions)
    labs = _as_binary("labels", labels)
    grps = _as_group_array(groups)
    if not (len(preds) == len(labs) == len(grps)):
        raise ValidationError(
            f"length mismatch: predictions {len(preds)}, labels {len(labs)}, "
            f"groups {len(grps)}"
        )
    if len(preds) == 0:
        raise ValidationError("need at least one sample")

    out = []
    for g in (GROUP_A, GROUP_B):
        mask = grps == g
        p, y = preds[mask], labs[mask]
        out.append(
            GroupCounts(
                count=int(mask.sum()),
                predicted_positive=int(p.sum()),
                true_positive=int((p & y).sum()),
                false_positive=int((p & (1 - y)).sum()),
                label1=int(y.sum()),
                label0=int((1 - y).sum()),
            )
        )
    return GroupRates(a=out[0], b=out[1])


def fairness_gap(metric: MetricLike, rates: GroupRates) -> Optional[float]:
    """Gap in [0, 1] for one metric, or None when undefined."""
    metric = coerce_metric(metric)
    a, b = rates.a, rates.b
    if metric is FairnessMetric.SP:
        if a.selection_rate is None or b.selection_rate is None:
            return None
        return abs(a.selection_rate - b.selection_rate)
    if metric is FairnessMetric.EQOP:
        if a.tpr is None or b.tpr is None:
            return None
        return abs(a.tpr - b.tpr)
    # eo: needs both tpr and fpr on both groups
    if None in (a.tpr, b.tpr, a.fpr, b.fpr):
        return None
    return max(abs(a.tpr - b.tpr), abs(a.fpr - b.fpr))


def gap_from_predictions(
    metric: MetricLike, predictions, labels, groups
) -> Optional[float]:
    return fairness_gap(metric, group_rates(predictions, labels, groups))


def all_gaps(predictions, labels, groups) -> dict:
    """All three gaps keyed by metric value; entries may be None."""
    rates = group_rates(predictions, labels, groups)
    return {m.value: fairness_gap(m, rates) for m in FairnessMetric}
