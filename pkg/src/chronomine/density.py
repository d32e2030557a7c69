"""Conditional time-gap densities fitted per rule pattern.

For a pattern grounding, the gap between a query endpoint and an anchor body
event's endpoint is modeled by one of three maximum-likelihood families:
gaussian, exponential (nonnegative gaps), or reflected exponential
(nonpositive gaps). The family with the best total log-likelihood wins.
Components are keyed by (pattern, query endpoint, anchor position, anchor
endpoint, era) with a fallback chain for sparse keys: era-pooled fit, then a
predicate-level gaussian, then a global gaussian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

from .errors import DatasetFormatError, InsufficientSamplesError, UnknownEndpointError
from .tkg import GRANULARITY_YEAR, Interval

GAUSSIAN = "gaussian"
EXPONENTIAL = "exponential"
REFLECTED = "reflected_exponential"

SIGMA_MIN = 0.5
N_MIN = 10

DENSITY_FILE_VERSION = "# gap-densities v1"

#: query-endpoint tags: start, end, duration
TARGET_START = "s"
TARGET_END = "e"
TARGET_DURATION = "d"


@dataclass(frozen=True)
class DensityComponent:
    """One fitted family: ('gaussian', mu, sigma) or ('exponential', rate)."""

    kind: str
    params: tuple[float, ...]
    n_samples: int = 0


def eval_component(c: DensityComponent, gap) -> np.ndarray | float:
    """Density of the component at one gap or an array of gaps.

    Gaps outside a one-sided family's support score exactly zero.
    """
    g = np.asarray(gap, dtype=np.float64)
    if c.kind == GAUSSIAN:
        mu, sigma = c.params
        out = np.exp(-0.5 * ((g - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    elif c.kind == EXPONENTIAL:
        (rate,) = c.params
        out = np.where(g >= 0, rate * np.exp(-rate * np.clip(g, 0, None)), 0.0)
    elif c.kind == REFLECTED:
        (rate,) = c.params
        out = np.where(g <= 0, rate * np.exp(rate * np.clip(g, None, 0)), 0.0)
    else:
        raise ValueError(f"unknown density family {c.kind!r}")
    return out if out.shape else float(out)


def _log_likelihood(c: DensityComponent, samples: np.ndarray) -> float:
    dens = np.asarray(eval_component(c, samples))
    if (dens <= 0).any():
        return -math.inf
    return float(np.log(dens).sum())


def fit_component(samples: Sequence[float], sigma_min: float = SIGMA_MIN) -> DensityComponent:
    """Fit all eligible families by maximum likelihood and keep the best.

    The gaussian scale is floored at sigma_min so degenerate samples cannot
    collapse into a spike; the exponential families share the same scale
    floor through their mean. One-sided families are eligible only when every
    sample lies in their support.
    """
    data = np.asarray(list(samples), dtype=np.float64)
    if data.size == 0:
        raise InsufficientSamplesError("no gap samples to fit")
    candidates = [
        DensityComponent(
            GAUSSIAN,
            (float(data.mean()), float(max(data.std(), sigma_min))),
            n_samples=data.size,
        )
    ]
    if (data >= 0).all():
        rate = 1.0 / max(float(data.mean()), sigma_min)
        candidates.append(DensityComponent(EXPONENTIAL, (rate,), n_samples=data.size))
    if (data <= 0).all():
        rate = 1.0 / max(float(-data.mean()), sigma_min)
        candidates.append(DensityComponent(REFLECTED, (rate,), n_samples=data.size))
    best = candidates[0]
    best_ll = _log_likelihood(best, data)
    for cand in candidates[1:]:
        ll = _log_likelihood(cand, data)
        if ll > best_ll:
            best, best_ll = cand, ll
    return best


@dataclass(frozen=True)
class EraPolicy:
    """Century-sized era pieces for year data; a single era for day data."""

    piece_length: Optional[int]

    def bucket(self, t: int) -> int:
        if self.piece_length is None:
            return 0
        return t // self.piece_length

    @classmethod
    def for_granularity(cls, granularity: str) -> "EraPolicy":
        return cls(piece_length=100 if granularity == GRANULARITY_YEAR else None)


class GapAccumulator:
    """Collects gap samples keyed for table fitting, plus fallback pools."""

    def __init__(self):
        self.by_key: dict[tuple, list[float]] = {}
        self.by_predicate: dict[tuple[str, str], list[float]] = {}
        self.by_target: dict[str, list[float]] = {}

    def add(
        self,
        pattern_hash: str,
        head_name: str,
        target: str,
        position: int,
        endpoint: str,
        era: int,
        value: float,
    ) -> None:
        key = (pattern_hash, target, position, endpoint, era)
        self.by_key.setdefault(key, []).append(value)
        self.by_predicate.setdefault((head_name, target), []).append(value)
        self.by_target.setdefault(target, []).append(value)

    def add_path_samples(
        self,
        pattern_hash: str,
        head_name: str,
        query_interval: Interval,
        path_intervals: Sequence[Interval],
        targets: Iterable[str],
        era_policy: EraPolicy,
    ) -> None:
        """Record the gap samples one grounded path contributes.

        Anchors are the first and last body events (one entry when the body
        has a single event). Anchors or query endpoints that are unknown are
        skipped silently; the fallback chain absorbs sparse keys.
        """
        length = len(path_intervals)
        positions = [(1, path_intervals[0])]
        if length > 1:
            positions.append((length, path_intervals[-1]))
        for pos, anchor in positions:
            if not anchor.known:
                continue
            era = era_policy.bucket(anchor.start)
            for b in targets:
                if b == TARGET_DURATION:
                    if query_interval.known:
                        self.add(
                            pattern_hash, head_name, b, pos, TARGET_START, era,
                            float(query_interval.duration),
                        )
                    continue
                t_qb = query_interval.start if b == TARGET_START else query_interval.end
                if t_qb is None:
                    continue
                self.add(pattern_hash, head_name, b, pos, TARGET_START, era,
                         float(t_qb - anchor.start))
                self.add(pattern_hash, head_name, b, pos, TARGET_END, era,
                         float(t_qb - anchor.end))


@dataclass
class DensityTable:
    """Fitted components with the sparse-key fallback chain baked in."""

    components: dict[tuple, DensityComponent] = field(default_factory=dict)
    pooled: dict[tuple, DensityComponent] = field(default_factory=dict)
    predicate_level: dict[tuple[str, str], DensityComponent] = field(default_factory=dict)
    global_level: dict[str, DensityComponent] = field(default_factory=dict)
    era_policy: EraPolicy = field(default_factory=lambda: EraPolicy(None))
    n_min: int = N_MIN
    sigma_min: float = SIGMA_MIN

    def lookup(
        self,
        pattern_hash: str,
        head_name: str,
        target: str,
        position: int,
        endpoint: str,
        era: int,
    ) -> DensityComponent:
        key = (pattern_hash, target, position, endpoint, era)
        if key in self.components:
            return self.components[key]
        pooled_key = (pattern_hash, target, position, endpoint)
        if pooled_key in self.pooled:
            return self.pooled[pooled_key]
        pred_key = (head_name, target)
        if pred_key in self.predicate_level:
            return self.predicate_level[pred_key]
        if target in self.global_level:
            return self.global_level[target]
        raise KeyError(f"no density available for target {target!r}")


def fit_density_table(
    acc: GapAccumulator,
    era_policy: EraPolicy,
    n_min: int = N_MIN,
    sigma_min: float = SIGMA_MIN,
) -> DensityTable:
    """Fit per-key components where dense enough, and every fallback level."""
    table = DensityTable(era_policy=era_policy, n_min=n_min, sigma_min=sigma_min)
    pooled_values: dict[tuple, list[float]] = {}
    for (pattern_hash, target, pos, endpoint, era), values in acc.by_key.items():
        pooled_values.setdefault((pattern_hash, target, pos, endpoint), []).extend(values)
        if len(values) >= n_min:
            key = (pattern_hash, target, pos, endpoint, era)
            table.components[key] = fit_component(values, sigma_min)
    for pooled_key, values in pooled_values.items():
        if len(values) >= n_min:
            table.pooled[pooled_key] = fit_component(values, sigma_min)
    for (head_name, target), values in acc.by_predicate.items():
        data = np.asarray(values)
        table.predicate_level[(head_name, target)] = DensityComponent(
            GAUSSIAN,
            (float(data.mean()), float(max(data.std(), sigma_min))),
            n_samples=data.size,
        )
    for target, values in acc.by_target.items():
        data = np.asarray(values)
        table.global_level[target] = DensityComponent(
            GAUSSIAN,
            (float(data.mean()), float(max(data.std(), sigma_min))),
            n_samples=data.size,
        )
    return table


@dataclass(frozen=True)
class GapMixture:
    """Inner mixture for one (pattern, target, anchor position) lookup.

    Blends a start-anchored and an end-anchored component; duration targets
    carry a single component evaluated at the candidate duration itself.
    """

    f_start: DensityComponent
    f_end: DensityComponent
    w: float
    duration: bool = False


def mixture_g(m: GapMixture, t: float, anchor: Interval) -> float:
    return float(mixture_g_rows(m, np.asarray([t], dtype=np.float64), anchor)[0])


def mixture_g_rows(m: GapMixture, ts: np.ndarray, anchor: Interval) -> np.ndarray:
    """Evaluate the inner mixture at candidate times, given the anchor interval."""
    if m.duration:
        return np.asarray(eval_component(m.f_start, ts))
    if not anchor.known:
        raise UnknownEndpointError("gap mixture needs a fully known anchor")
    start_part = np.asarray(eval_component(m.f_start, ts - anchor.start))
    end_part = np.asarray(eval_component(m.f_end, ts - anchor.end))
    return m.w * start_part + (1.0 - m.w) * end_part


def mixture_outer(weights: Sequence[float], values: np.ndarray) -> np.ndarray:
    """Convex combination of per-position mixtures: weights sum to one."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != values.shape[0]:
        raise ValueError("one weight per mixture row required")
    if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("outer weights must be a convex combination")
    return w @ values


def _format_params(c: DensityComponent) -> str:
    return ",".join(repr(p) for p in c.params)


def _parse_component(kind: str, params: str, n: str) -> DensityComponent:
    return DensityComponent(kind, tuple(float(p) for p in params.split(",")), int(n))


def save_density_table(table: DensityTable, fh: TextIO, meta: dict[str, str] | None = None) -> None:
    fh.write(DENSITY_FILE_VERSION + "\n")
    meta = dict(meta or {})
    meta.setdefault("era_piece", str(table.era_policy.piece_length or 0))
    meta.setdefault("n_min", str(table.n_min))
    meta.setdefault("sigma_min", repr(table.sigma_min))
    for key in sorted(meta):
        fh.write(f"# {key}={meta[key]}\n")
    for (h, b, pos, bp, era), c in sorted(table.components.items()):
        fh.write(
            f"pattern\t{h}\t{b}\t{pos}\t{bp}\t{era}\t{c.kind}\t{_format_params(c)}\t{c.n_samples}\n"
        )
    for (h, b, pos, bp), c in sorted(table.pooled.items()):
        fh.write(
            f"pattern\t{h}\t{b}\t{pos}\t{bp}\t*\t{c.kind}\t{_format_params(c)}\t{c.n_samples}\n"
        )
    for (head, b), c in sorted(table.predicate_level.items()):
        fh.write(
            f"predicate\t{head}\t{b}\t*\t*\t*\t{c.kind}\t{_format_params(c)}\t{c.n_samples}\n"
        )
    for b, c in sorted(table.global_level.items()):
        fh.write(
            f"global\t*\t{b}\t*\t*\t*\t{c.kind}\t{_format_params(c)}\t{c.n_samples}\n"
        )


def load_density_table(fh: TextIO) -> tuple[DensityTable, dict[str, str]]:
    meta: dict[str, str] = {}
    table = DensityTable()
    saw_version = False
    for lineno, raw in enumerate(fh, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            if line == DENSITY_FILE_VERSION:
                saw_version = True
            elif "=" in line:
                k, _, v = line[1:].strip().partition("=")
                meta[k.strip()] = v
            continue
        cols = line.split("\t")
        if len(cols) != 9:
            raise DatasetFormatError("density row needs nine columns", lineno)
        row_kind, name, b, pos, bp, era, kind, params, n = cols
        component = _parse_component(kind, params, n)
        if row_kind == "pattern":
            if era == "*":
                table.pooled[(name, b, int(pos), bp)] = component
            else:
                table.components[(name, b, int(pos), bp, int(era))] = component
        elif row_kind == "predicate":
            table.predicate_level[(name, b)] = component
        elif row_kind == "global":
            table.global_level[b] = component
        else:
            raise DatasetFormatError(f"unknown density row kind {row_kind!r}", lineno)
    if not saw_version:
        raise DatasetFormatError("missing density-table version header")
    piece = int(meta.get("era_piece", "0"))
    table.era_policy = EraPolicy(piece_length=piece or None)
    table.n_min = int(meta.get("n_min", str(N_MIN)))
    table.sigma_min = float(meta.get("sigma_min", repr(SIGMA_MIN)))
    return table, meta
