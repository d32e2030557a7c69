"""Rule mining by cyclic random walks over the event graph.

A rule pattern is a head predicate, a sequence of body predicates, and the
temporal relations between consecutive body intervals. Patterns are mined by
sampling walks that leave a query event, step along entity edges through
fully-known facts, and close back at the query. The same machinery grounds
known patterns exhaustively (depth-first, deterministic order) and assembles
the per-query local graph that the differentiable walk later runs on.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

from .errors import DatasetFormatError
from .eventgraph import EventGraph
from .tkg import (
    Interval,
    SymbolTable,
    TemporalRelation,
    inverse_predicate,
    relation_holds,
    temporal_relation,
)

TRANSITION_UNIFORM = "uniform"
TRANSITION_EXPONENTIAL = "exponential"

RULE_FILE_VERSION = "# rule-patterns v1"


@dataclass(frozen=True)
class RulePattern:
    """Head predicate, body predicates, and body-to-body temporal relations."""

    head: int
    body: tuple[int, ...]
    relations: tuple[TemporalRelation, ...]

    def __post_init__(self):
        if not self.body:
            raise ValueError("rule pattern needs at least one body event")
        if len(self.relations) != len(self.body) - 1:
            raise ValueError("need exactly one relation per consecutive body pair")

    @property
    def length(self) -> int:
        return len(self.body)

    def key(self) -> tuple:
        return (self.head, self.body, tuple(tr.value for tr in self.relations))


def pattern_hash(pattern: RulePattern, predicates: SymbolTable) -> str:
    """Stable hex digest over the pattern's symbol names."""
    parts = [predicates.name(pattern.head)]
    parts.extend(predicates.name(p) for p in pattern.body)
    parts.extend(tr.value for tr in pattern.relations)
    return hashlib.sha1("\t".join(parts).encode()).hexdigest()[:12]


@dataclass(frozen=True)
class GroundedPath:
    """One closed walk: the body events visited for a query, with intervals."""

    query: int  # event id of the walk's start, -1 for a virtual query
    events: tuple[int, ...]
    intervals: tuple[Interval, ...]
    pattern: RulePattern


@dataclass(frozen=True)
class QueryView:
    """A query orientation: either an existing event or a virtual triple."""

    subject: int
    predicate: int
    object: int
    event_id: Optional[int] = None
    mirror_event_id: Optional[int] = None

    @property
    def walk_id(self) -> int:
        return self.event_id if self.event_id is not None else -1


def query_from_event(g: EventGraph, event_id: int) -> QueryView:
    fact = g.tkg.facts[event_id]
    return QueryView(
        subject=fact.subject,
        predicate=fact.predicate,
        object=fact.object,
        event_id=event_id,
        mirror_event_id=g.mirror(event_id),
    )


def query_from_triple(g: EventGraph, subject: int, predicate: int, object: int) -> QueryView:
    return QueryView(subject=subject, predicate=predicate, object=object)


def mirror_view(g: EventGraph, q: QueryView) -> QueryView:
    """The same query seen from the inverse orientation."""
    return QueryView(
        subject=q.object,
        predicate=inverse_predicate(q.predicate, len(g.tkg.predicates) // 2),
        object=q.subject,
        event_id=q.mirror_event_id,
        mirror_event_id=q.event_id,
    )


@dataclass
class MinerConfig:
    """Walk sampling and pattern extraction knobs.

    walks_per_predicate is the total attempt budget per oriented predicate for
    the mining stage: the stage samples up to
    max(1, walks_per_predicate // walks_per_query) query events per predicate
    and runs walks_per_query attempts per (orientation, length).
    """

    max_length: int = 3
    walks_per_query: int = 10
    walks_per_predicate: int = 200
    transition: str = TRANSITION_UNIFORM
    exponential_rate: Optional[float] = None
    min_support: int = 2
    max_groundings: int = 64
    pattern_free_exploration: bool = True
    exploration_budget: int = 2000


def default_transition(schema: str) -> str:
    """Uniform steps for interval datasets, time-biased for timestamp ones."""
    return TRANSITION_UNIFORM if schema == "interval" else TRANSITION_EXPONENTIAL


def median_start_gap(g: EventGraph, cap: int = 50_000) -> float:
    """Median |start difference| over entity-edge-adjacent fact pairs."""
    gaps = []
    for m in range(g.num_events):
        s_m = g.interval(m).start
        if s_m is None:
            continue
        for n in g.successors[m]:
            s_n = g.interval(int(n)).start
            if s_n is not None:
                gaps.append(abs(s_n - s_m))
                if len(gaps) >= cap:
                    return float(np.median(gaps))
    return float(np.median(gaps)) if gaps else 1.0


def resolve_transition_rate(g: EventGraph, cfg: MinerConfig) -> MinerConfig:
    """Fill the exponential decay rate from the dataset when left unset."""
    if cfg.transition != TRANSITION_EXPONENTIAL or cfg.exponential_rate is not None:
        return cfg
    med = median_start_gap(g)
    return replace(cfg, exponential_rate=1.0 / med if med > 0 else 1.0)


def transition_weights(
    g: EventGraph, current: int, candidates: Sequence[int], cfg: MinerConfig
) -> np.ndarray:
    """Normalized step probabilities over candidate next events.

    Exponential weighting decays with the absolute start-time difference;
    candidates with unknown starts are charged the largest observed difference
    so they stay reachable without being favored.
    """
    k = len(candidates)
    if k == 0:
        return np.empty(0)
    if cfg.transition == TRANSITION_UNIFORM:
        return np.full(k, 1.0 / k)
    if cfg.transition != TRANSITION_EXPONENTIAL:
        raise ValueError(f"unknown transition kind {cfg.transition!r}")
    rate = cfg.exponential_rate
    if rate is None:
        raise ValueError("exponential transition rate unresolved")
    s_cur = g.interval(current).start
    deltas = np.full(k, np.nan)
    if s_cur is not None:
        for i, n in enumerate(candidates):
            s_n = g.interval(int(n)).start
            if s_n is not None:
                deltas[i] = abs(s_n - s_cur)
    known = ~np.isnan(deltas)
    if not known.any():
        return np.full(k, 1.0 / k)
    deltas[~known] = deltas[known].max()
    weights = np.exp(-rate * deltas)
    total = weights.sum()
    if total <= 0:
        return np.full(k, 1.0 / k)
    return weights / total


def _known(g: EventGraph, m: int) -> bool:
    return g.interval(m).known


def _body_candidates(
    g: EventGraph,
    from_entity: int,
    excluded_body: frozenset[int],
    forbid: Optional[int] = None,
) -> list[int]:
    out = []
    for n in g.subject_index.get(from_entity, ()):
        n = int(n)
        if n == forbid or n in excluded_body or not _known(g, n):
            continue
        out.append(n)
    return out


def _pattern_of(g: EventGraph, head: int, events: Sequence[int]) -> RulePattern:
    relations = tuple(
        temporal_relation(g.interval(a), g.interval(b))
        for a, b in zip(events, events[1:])
    )
    return RulePattern(head=head, body=tuple(g.predicate(m) for m in events), relations=relations)


def sample_cyclic_walks(
    g: EventGraph,
    query: QueryView,
    cfg: MinerConfig,
    seed: int,
    excluded_body: frozenset[int] = frozenset(),
) -> list[GroundedPath]:
    """Sample closed walks from the query and from its mirror orientation.

    Per orientation and per target length 1..max_length, walks_per_query
    attempts are made. A walk steps along entity edges through fully-known
    facts; the first hop may not enter the start's own mirror; a walk counts
    only when an entity edge closes it back at the start. The result is a
    multiset: repeat discoveries are kept and deduplicated at extraction.
    """
    cfg = resolve_transition_rate(g, cfg)
    paths: list[GroundedPath] = []
    for orient_idx, start in enumerate((query, mirror_view(g, query))):
        for length in range(1, cfg.max_length + 1):
            rng = np.random.default_rng(
                [seed & 0x7FFFFFFF, max(start.walk_id, 0), orient_idx, length]
            )
            for _ in range(cfg.walks_per_query):
                events: list[int] = []
                entity = start.object
                ok = True
                for pos in range(length):
                    forbid = start.mirror_event_id if pos == 0 else None
                    cands = _body_candidates(g, entity, excluded_body, forbid)
                    if not cands:
                        ok = False
                        break
                    if pos == 0 and start.event_id is None:
                        probs = np.full(len(cands), 1.0 / len(cands))
                    else:
                        current = start.event_id if pos == 0 else events[-1]
                        probs = transition_weights(g, current, cands, cfg)
                    choice = int(rng.choice(len(cands), p=probs))
                    events.append(cands[choice])
                    entity = g.tkg.facts[events[-1]].object
                if not ok or entity != start.subject:
                    continue
                paths.append(
                    GroundedPath(
                        query=start.walk_id,
                        events=tuple(events),
                        intervals=tuple(g.interval(m) for m in events),
                        pattern=_pattern_of(g, start.predicate, events),
                    )
                )
    return paths


def extract_rule_patterns(
    paths: Iterable[GroundedPath], min_support: int
) -> list[tuple[RulePattern, int]]:
    """Deduplicate sampled walks into patterns with distinct-grounding support."""
    groundings: dict[RulePattern, set[tuple]] = {}
    for path in paths:
        groundings.setdefault(path.pattern, set()).add((path.query, path.events))
    ranked = [
        (pattern, len(seen))
        for pattern, seen in groundings.items()
        if len(seen) >= min_support
    ]
    ranked.sort(key=lambda item: (-item[1], item[0].key()))
    return ranked


def ground_patterns(
    g: EventGraph,
    query: QueryView,
    patterns: Sequence[RulePattern],
    cfg: MinerConfig,
    excluded_body: frozenset[int] = frozenset(),
) -> dict[RulePattern, list[GroundedPath]]:
    """Exhaustively ground each pattern whose head matches an orientation.

    Depth-first in event-id order, capped at max_groundings per pattern and
    orientation, so results are deterministic regardless of seeds.
    """
    out: dict[RulePattern, list[GroundedPath]] = {p: [] for p in patterns}
    for start in (query, mirror_view(g, query)):
        for pattern in patterns:
            if pattern.head != start.predicate:
                continue
            found = out[pattern]
            budget = cfg.max_groundings
            stack: list[tuple[list[int], int]] = [([], start.object)]
            while stack and budget > 0:
                events, entity = stack.pop()
                pos = len(events)
                forbid = start.mirror_event_id if pos == 0 else None
                cands = _body_candidates(g, entity, excluded_body, forbid)
                # reversed so the stack pops candidates in ascending id order
                for n in reversed(cands):
                    if g.predicate(n) != pattern.body[pos]:
                        continue
                    if pos > 0 and not relation_holds(
                        pattern.relations[pos - 1],
                        g.interval(events[-1]),
                        g.interval(n),
                    ):
                        continue
                    if pos == pattern.length - 1:
                        if g.tkg.facts[n].object != start.subject:
                            continue
                        body = events + [n]
                        found.append(
                            GroundedPath(
                                query=start.walk_id,
                                events=tuple(body),
                                intervals=tuple(g.interval(m) for m in body),
                                pattern=pattern,
                            )
                        )
                        budget -= 1
                        if budget <= 0:
                            break
                    else:
                        stack.append((events + [n], g.tkg.facts[n].object))
    return out


def _explore_closed_walks(
    g: EventGraph,
    start: QueryView,
    cfg: MinerConfig,
    excluded_body: frozenset[int],
) -> set[int]:
    """Events on any closed walk from the start, bounded by a visit budget."""
    touched: set[int] = set()
    budget = cfg.exploration_budget
    stack: list[tuple[tuple[int, ...], int]] = [((), start.object)]
    while stack and budget > 0:
        events, entity = stack.pop()
        pos = len(events)
        forbid = start.mirror_event_id if pos == 0 else None
        for n in reversed(_body_candidates(g, entity, excluded_body, forbid)):
            budget -= 1
            if budget <= 0:
                break
            path = events + (n,)
            if g.tkg.facts[n].object == start.subject:
                touched.update(path)
            if pos + 1 < cfg.max_length:
                stack.append((path, g.tkg.facts[n].object))
    return touched


@dataclass
class LocalGraph:
    """Query-local slice of the event graph with induced dense operators.

    Local events carry re-indexed dense ids; global_ids translates back
    (virtual query events map to -1 and -2). Operator entry [n, m] mirrors the
    global convention: entity edge m -> n with the relation holding.
    """

    global_ids: list[int]
    subjects: np.ndarray
    predicates: np.ndarray
    objects: np.ndarray
    intervals: list[Interval]
    query_local: int
    mirror_local: int
    id_map: dict[int, int]
    operators: dict[TemporalRelation, np.ndarray]

    @property
    def num_events(self) -> int:
        return len(self.global_ids)

    def predicate_diag(self, predicate: int) -> np.ndarray:
        return self.predicates == predicate


def _induced_operators(
    subjects: np.ndarray,
    objects: np.ndarray,
    intervals: list[Interval],
) -> dict[TemporalRelation, np.ndarray]:
    starts = np.array(
        [np.nan if i.start is None else float(i.start) for i in intervals]
    )
    ends = np.array([np.nan if i.end is None else float(i.end) for i in intervals])
    adjacency = subjects[:, None] == objects[None, :]  # [n, m]
    with np.errstate(invalid="ignore"):
        before = adjacency & (ends[None, :] < starts[:, None])
        after = adjacency & (starts[None, :] > ends[:, None])
    known = ~np.isnan(starts) & ~np.isnan(ends)
    both_known = known[:, None] & known[None, :]
    overlap = adjacency & both_known & ~before & ~after
    return {
        TemporalRelation.BEFORE: before,
        TemporalRelation.OVERLAP: overlap,
        TemporalRelation.AFTER: after,
        TemporalRelation.ANY: adjacency,
    }


def build_local_graph(
    g: EventGraph,
    query: QueryView,
    patterns: Sequence[RulePattern],
    cfg: MinerConfig,
    excluded_body: frozenset[int] = frozenset(),
) -> tuple[LocalGraph, dict[RulePattern, list[GroundedPath]]]:
    """Assemble the query-local graph and the pattern groundings it came from.

    Events come from grounding the supplied patterns from both orientations;
    an orientation whose head predicate has no pattern falls back to bounded
    pattern-free exploration when the config permits it. The query and its
    mirror are always present.
    """
    grounded = ground_patterns(g, query, patterns, cfg, excluded_body)
    members: set[int] = set()
    for paths in grounded.values():
        for path in paths:
            members.update(path.events)
    if cfg.pattern_free_exploration:
        heads = {p.head for p in patterns}
        for start in (query, mirror_view(g, query)):
            if start.predicate not in heads:
                members.update(_explore_closed_walks(g, start, cfg, excluded_body))

    real_ids = sorted(m for m in members if m not in (query.event_id, query.mirror_event_id))
    rows: list[tuple[int, int, int, int, Interval]] = []
    for m in real_ids:
        fact = g.tkg.facts[m]
        rows.append((m, fact.subject, fact.predicate, fact.object, fact.when))
    if query.event_id is not None:
        fact = g.tkg.facts[query.event_id]
        rows.append((fact.id, fact.subject, fact.predicate, fact.object, fact.when))
        mfact = g.tkg.facts[query.mirror_event_id]
        rows.append((mfact.id, mfact.subject, mfact.predicate, mfact.object, mfact.when))
    else:
        unknown = Interval(None, None)
        rows.append((-1, query.subject, query.predicate, query.object, unknown))
        mirror = mirror_view(g, query)
        rows.append((-2, mirror.subject, mirror.predicate, mirror.object, unknown))

    global_ids = [r[0] for r in rows]
    subjects = np.array([r[1] for r in rows], dtype=np.int64)
    predicates = np.array([r[2] for r in rows], dtype=np.int64)
    objects = np.array([r[3] for r in rows], dtype=np.int64)
    intervals = [r[4] for r in rows]
    local = LocalGraph(
        global_ids=global_ids,
        subjects=subjects,
        predicates=predicates,
        objects=objects,
        intervals=intervals,
        query_local=len(rows) - 2,
        mirror_local=len(rows) - 1,
        id_map={gid: i for i, gid in enumerate(global_ids) if gid >= 0},
        operators=_induced_operators(subjects, objects, intervals),
    )
    return local, grounded


def write_rule_file(
    fh: TextIO,
    ranked: Sequence[tuple[RulePattern, int]],
    predicates: SymbolTable,
) -> None:
    """One pattern per line: head, body names, relation names, support."""
    fh.write(RULE_FILE_VERSION + "\n")
    for pattern, support in ranked:
        cols = [predicates.name(pattern.head)]
        cols.extend(predicates.name(p) for p in pattern.body)
        cols.extend(tr.value for tr in pattern.relations)
        cols.append(str(support))
        fh.write("\t".join(cols) + "\n")


def read_rule_file(fh: TextIO, predicates: SymbolTable) -> list[tuple[RulePattern, int]]:
    ranked: list[tuple[RulePattern, int]] = []
    saw_version = False
    for lineno, raw in enumerate(fh, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            if line == RULE_FILE_VERSION:
                saw_version = True
            continue
        cols = line.split("\t")
        if len(cols) < 3 or len(cols) % 2 == 0:
            raise DatasetFormatError("malformed rule row", lineno)
        length = (len(cols) - 1) // 2
        try:
            head = predicates.id(cols[0])
            body = tuple(predicates.id(c) for c in cols[1 : 1 + length])
            relations = tuple(
                TemporalRelation(c) for c in cols[1 + length : 2 * length]
            )
            support = int(cols[-1])
        except (KeyError, ValueError) as exc:
            raise DatasetFormatError(f"bad rule row: {exc}", lineno) from None
        ranked.append((RulePattern(head, body, relations), support))
    if not saw_version:
        raise DatasetFormatError("missing rule-file version header")
    return ranked
