"""Micro-F1 with negative-label exclusion, seed aggregation, bucket reports.

TACRED-style scoring: the negative class contributes no true positives, a
non-negative prediction on a negative gold is a false positive, and a missed
non-negative gold is a false negative. Without a negative label the measure
reduces to plain accuracy (P = R = F1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class MetricsError(Exception):
    pass


def micro_f1(
    preds: list[str], golds: list[str], negative: str | None = None
) -> tuple[float, float, float]:
    """Globally pooled precision, recall, and F1."""
    if len(preds) != len(golds):
        raise MetricsError(f"length mismatch: {len(preds)} predictions, {len(golds)} golds")
    tp = fp = fn = 0
    for p, g in zip(preds, golds):
        if negative is None:
            # accuracy-style: every item is scored
            if p == g:
                tp += 1
            else:
                fp += 1
                fn += 1
            continue
        if g != negative and p == g:
            tp += 1
        else:
            if p != negative and p != g:
                fp += 1
            if g != negative and p != g:
                fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def aggregate(seed_scores: list[float]) -> tuple[float, float]:
    """Arithmetic mean and population (divide-by-n) standard deviation."""
    if not seed_scores:
        raise MetricsError("cannot aggregate zero scores")
    n = len(seed_scores)
    mean = sum(seed_scores) / n
    var = sum((s - mean) ** 2 for s in seed_scores) / n
    return mean, math.sqrt(var)


def frequency_report(
    preds: list[str],
    golds: list[str],
    buckets: dict[str, list[int]],
    negative: str | None = None,
) -> dict[str, tuple[float, float, float]]:
    """micro_f1 restricted to each bucket's indices; empty buckets are omitted."""
    if len(preds) != len(golds):
        raise MetricsError(f"length mismatch: {len(preds)} predictions, {len(golds)} golds")
    report = {}
    for name, idx in buckets.items():
        if not idx:
            continue
        report[name] = micro_f1([preds[i] for i in idx], [golds[i] for i in idx], negative)
    return report


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    n_instances: int
    per_bucket: dict[str, tuple[float, float, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "precision": self.precision,
            "recall": self.recall,
            "micro_f1": self.f1,
            "n_instances": self.n_instances,
        }
        if self.per_bucket:
            out["buckets"] = {
                name: {"precision": p, "recall": r, "micro_f1": f}
                for name, (p, r, f) in self.per_bucket.items()
            }
        return out
