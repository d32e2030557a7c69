"""Stage glue shared by the command-line pipeline and the test harness."""

from __future__ import annotations

import statistics
from collections import Counter, defaultdict
from typing import Optional, Sequence

import numpy as np

from .density import (
    N_MIN,
    SIGMA_MIN,
    DensityTable,
    EraPolicy,
    GapAccumulator,
    fit_density_table,
)
from .eventgraph import EventGraph
from .mining import (
    MinerConfig,
    RulePattern,
    extract_rule_patterns,
    ground_patterns,
    pattern_hash,
    query_from_event,
    resolve_transition_rate,
    sample_cyclic_walks,
)
from .tkg import Tkg


def mine_rules(
    g: EventGraph,
    cfg: MinerConfig,
    seed: int,
    self_mask: bool = True,
) -> list[tuple[RulePattern, int]]:
    """Sample closed walks around each predicate's facts and rank the patterns.

    walks_per_predicate is a total attempt budget per base predicate: up to
    walks_per_predicate // walks_per_query query facts are drawn, and each
    runs walks_per_query attempts per orientation and length. Deterministic
    for a fixed seed.
    """
    cfg = resolve_transition_rate(g, cfg)
    rng = np.random.default_rng(seed)
    per_predicate = max(1, cfg.walks_per_predicate // max(1, cfg.walks_per_query))
    by_predicate: dict[int, list[int]] = {}
    for fact in g.tkg.facts[: g.num_base]:
        by_predicate.setdefault(fact.predicate, []).append(fact.id)
    paths = []
    for predicate in sorted(by_predicate):
        ids = by_predicate[predicate]
        chosen = rng.permutation(len(ids))[:per_predicate]
        for offset in sorted(int(i) for i in chosen):
            view = query_from_event(g, ids[offset])
            excluded = (
                frozenset({view.event_id, view.mirror_event_id})
                if self_mask
                else frozenset()
            )
            paths.extend(sample_cyclic_walks(g, view, cfg, seed, excluded))
    return extract_rule_patterns(paths, cfg.min_support)


def collect_gap_samples(
    g: EventGraph,
    patterns: Sequence[RulePattern],
    miner_cfg: MinerConfig,
    era_policy: EraPolicy,
    targets: Sequence[str],
    query_ids: Optional[Sequence[int]] = None,
    self_mask: bool = True,
) -> GapAccumulator:
    """Gap samples from grounding the patterns around every training fact.

    Each base fact serves as a query; its own event and mirror are masked out
    of the grounding walks (self_mask) so anchors never see the query's own
    interval. Samples are keyed by pattern, target, anchor position, anchor
    endpoint, and era.
    """
    acc = GapAccumulator()
    ids = range(g.num_base) if query_ids is None else query_ids
    for fact_id in ids:
        fact = g.tkg.facts[fact_id]
        if fact.when.start is None and fact.when.end is None:
            continue
        view = query_from_event(g, fact_id)
        excluded = (
            frozenset({view.event_id, view.mirror_event_id})
            if self_mask
            else frozenset()
        )
        grounded = ground_patterns(g, view, patterns, miner_cfg, excluded)
        for pattern, paths in grounded.items():
            if not paths:
                continue
            h = pattern_hash(pattern, g.tkg.predicates)
            head_name = g.tkg.predicates.name(pattern.head)
            for path in paths:
                acc.add_path_samples(
                    h, head_name, fact.when, path.intervals, targets, era_policy
                )
    return acc


def fit_densities(
    g: EventGraph,
    patterns: Sequence[RulePattern],
    miner_cfg: MinerConfig,
    targets: Sequence[str],
    self_mask: bool = True,
    n_min: int = N_MIN,
    sigma_min: float = SIGMA_MIN,
) -> DensityTable:
    """Collect gap samples over the whole graph and fit the density table."""
    era_policy = EraPolicy.for_granularity(g.tkg.granularity)
    acc = collect_gap_samples(
        g, patterns, miner_cfg, era_policy, targets, self_mask=self_mask
    )
    return fit_density_table(acc, era_policy, n_min=n_min, sigma_min=sigma_min)


def fallback_statistics(tkg: Tkg) -> dict[str, tuple[int, int]]:
    """Per-predicate marginal guess: (most frequent start, median duration).

    Queries that ground nothing fall back to this. The mode breaks frequency
    ties toward the earliest start; the duration is the lower median over
    facts with both endpoints known. Predicates whose starts are all unknown
    are omitted.
    """
    base = tkg.facts[: len(tkg.facts) // 2] if tkg.has_inverses else tkg.facts
    starts: dict[str, Counter] = defaultdict(Counter)
    durations: dict[str, list[int]] = defaultdict(list)
    for fact in base:
        name = tkg.predicates.name(fact.predicate)
        if fact.when.start is None:
            continue
        starts[name][fact.when.start] += 1
        if fact.when.end is not None:
            durations[name].append(fact.when.end - fact.when.start)
    out: dict[str, tuple[int, int]] = {}
    for name, counter in starts.items():
        mode_start = min(counter.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        median = statistics.median_low(durations[name]) if durations[name] else 0
        out[name] = (int(mode_start), int(median))
    return out
