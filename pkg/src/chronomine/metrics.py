"""Interval-prediction metrics and dataset-level evaluation reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, TextIO

from .errors import UnknownEndpointError
from .tkg import Interval


def vol(interval: Interval) -> int:
    """Inclusive unit count covered by the interval (a point counts as 1)."""
    if not interval.known:
        raise UnknownEndpointError("volume needs both endpoints")
    return interval.end - interval.start + 1


def _check_pair(truth: Interval, pred: Interval) -> None:
    if not (truth.known and pred.known):
        raise UnknownEndpointError("metric needs fully known intervals")
    if truth.start > truth.end or pred.start > pred.end:
        raise ValueError("metric intervals must be well-ordered")


def aeiou(truth: Interval, pred: Interval) -> float:
    """Intersection-over-hull with the empty intersection floored at one unit."""
    _check_pair(truth, pred)
    lo = max(truth.start, pred.start)
    hi = min(truth.end, pred.end)
    intersection = hi - lo + 1 if hi >= lo else 0
    hull = vol(Interval(min(truth.start, pred.start), max(truth.end, pred.end)))
    return max(1, intersection) / hull


def tac(truth: Interval, pred: Interval) -> float:
    """Mean reciprocal closeness of the two endpoints."""
    _check_pair(truth, pred)
    return 0.5 * (
        1.0 / (1 + abs(truth.start - pred.start))
        + 1.0 / (1 + abs(truth.end - pred.end))
    )


def mae(truths: Sequence[float], preds: Sequence[float]) -> float:
    """Mean absolute error in granularity units."""
    if len(truths) != len(preds):
        raise ValueError("truth and prediction lists must have equal length")
    if not truths:
        raise ValueError("cannot average an empty list")
    return sum(abs(t - p) for t, p in zip(truths, preds)) / len(truths)


@dataclass
class EvalReport:
    """Aggregated metrics over the evaluated (non-skipped) queries."""

    count: int = 0
    skipped: int = 0
    means: dict[str, float] = field(default_factory=dict)
    by_predicate: dict[str, dict[str, float]] = field(default_factory=dict)
    predicate_counts: dict[str, int] = field(default_factory=dict)
    fallback_count: int = 0
    forecast_violations: int = 0


def evaluate_dataset(
    predict_fn: Callable[[tuple[str, str, str]], Interval],
    queries: Sequence[tuple[str, str, str]],
    truths: Sequence[Interval],
    fallback_flags: Optional[Sequence[bool]] = None,
) -> EvalReport:
    """Score a predictor over labeled queries, skipping unknown truths.

    predict_fn maps a (subject, predicate, object) name triple to a predicted
    interval. MAE is averaged over both endpoints of each evaluated query.
    """
    report = EvalReport()
    sums = {"aeiou": 0.0, "tac": 0.0, "mae": 0.0}
    per_pred: dict[str, dict[str, float]] = {}
    for idx, (query, truth) in enumerate(zip(queries, truths)):
        if not truth.known:
            report.skipped += 1
            continue
        pred = predict_fn(query)
        scores = {
            "aeiou": aeiou(truth, pred),
            "tac": tac(truth, pred),
            "mae": 0.5 * (abs(truth.start - pred.start) + abs(truth.end - pred.end)),
        }
        report.count += 1
        if fallback_flags is not None and fallback_flags[idx]:
            report.fallback_count += 1
        bucket = per_pred.setdefault(query[1], {"aeiou": 0.0, "tac": 0.0, "mae": 0.0})
        for name, value in scores.items():
            sums[name] += value
            bucket[name] += value
        report.predicate_counts[query[1]] = report.predicate_counts.get(query[1], 0) + 1
    if report.count:
        report.means = {name: total / report.count for name, total in sums.items()}
        report.by_predicate = {
            pred: {m: v / report.predicate_counts[pred] for m, v in bucket.items()}
            for pred, bucket in per_pred.items()
        }
    return report


def write_report_tsv(report: EvalReport, fh: TextIO) -> None:
    fh.write("scope\tpredicate\tcount\taeiou\ttac\tmae\n")
    if report.count:
        m = report.means
        fh.write(
            f"overall\t*\t{report.count}\t{m['aeiou']:.6f}\t{m['tac']:.6f}\t{m['mae']:.6f}\n"
        )
    for pred in sorted(report.by_predicate):
        b = report.by_predicate[pred]
        fh.write(
            f"predicate\t{pred}\t{report.predicate_counts[pred]}\t"
            f"{b['aeiou']:.6f}\t{b['tac']:.6f}\t{b['mae']:.6f}\n"
        )


def format_report(report: EvalReport) -> str:
    lines = [
        f"queries evaluated: {report.count}",
        f"queries skipped (unknown truth): {report.skipped}",
        f"fallback predictions: {report.fallback_count}",
    ]
    if report.forecast_violations:
        lines.append(f"forecast violations: {report.forecast_violations}")
    if report.count:
        lines.append(
            "aeIOU {aeiou:.4f}  TAC {tac:.4f}  MAE {mae:.4f}".format(**report.means)
        )
    else:
        lines.append("no queries evaluated; means undefined")
    return "\n".join(lines)
