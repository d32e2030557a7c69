"""Event-centric view of a temporal knowledge graph.

Every augmented fact becomes an event node. A directed entity edge connects
event m to event n when object(m) = subject(n), so cyclic walks through events
correspond to entity walks in the underlying graph. Known interval endpoints
become timestamp nodes chained by order edges and linked to their events.

Two boolean operator families drive both mining checks and the differentiable
walk: a diagonal predicate selector, and one adjacency matrix per temporal
relation whose entry (n, m) holds when the entity edge m -> n exists and the
relation holds between the two intervals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TextIO

import numpy as np
from scipy import sparse

from .tkg import RELATIONS, Interval, TemporalRelation, Tkg, relation_holds


@dataclass(frozen=True)
class PredicateOperator:
    """Diagonal selector: diag[m] is True when event m carries the predicate."""

    predicate: int
    diag: np.ndarray


@dataclass(frozen=True)
class EdgeOperator:
    """Sparse boolean matrix for one temporal relation, column-compressed."""

    relation: TemporalRelation
    matrix: sparse.csc_matrix


@dataclass
class EventGraph:
    """Immutable event graph built from an inverse-augmented Tkg."""

    tkg: Tkg
    successors: list[np.ndarray]
    subject_index: dict[int, np.ndarray]
    timestamps: np.ndarray
    time_edges: list[tuple[int, int, str]]

    @property
    def num_events(self) -> int:
        return self.tkg.num_facts

    @property
    def num_base(self) -> int:
        return self.tkg.num_facts // 2

    def mirror(self, m: int) -> int:
        base = self.num_base
        return m + base if m < base else m - base

    def is_mirror(self, m: int) -> bool:
        return m >= self.num_base

    def interval(self, m: int) -> Interval:
        return self.tkg.facts[m].when

    def predicate(self, m: int) -> int:
        return self.tkg.facts[m].predicate

    @property
    def order_edges(self) -> list[tuple[int, int]]:
        ts = self.timestamps
        return [(int(ts[i]), int(ts[i + 1])) for i in range(len(ts) - 1)]

    def entity_edges(self):
        """Yield every (m, n) entity edge."""
        for m, succ in enumerate(self.successors):
            for n in succ:
                yield (m, int(n))


def build_event_graph(tkg: Tkg) -> EventGraph:
    """Convert an inverse-augmented Tkg into its event graph."""
    if not tkg.has_inverses:
        raise ValueError("event graph requires an inverse-augmented Tkg")
    by_subject: dict[int, list[int]] = {}
    for fact in tkg.facts:
        by_subject.setdefault(fact.subject, []).append(fact.id)
    subject_index = {
        e: np.asarray(ids, dtype=np.int64) for e, ids in by_subject.items()
    }
    empty = np.empty(0, dtype=np.int64)
    successors = [
        subject_index.get(fact.object, empty) for fact in tkg.facts
    ]

    endpoints = set()
    time_edges: list[tuple[int, int, str]] = []
    for fact in tkg.facts:
        if fact.when.start is not None:
            endpoints.add(fact.when.start)
            time_edges.append((fact.id, fact.when.start, "s"))
        if fact.when.end is not None:
            endpoints.add(fact.when.end)
            time_edges.append((fact.id, fact.when.end, "e"))
    timestamps = np.asarray(sorted(endpoints), dtype=np.int64)

    return EventGraph(
        tkg=tkg,
        successors=successors,
        subject_index=subject_index,
        timestamps=timestamps,
        time_edges=time_edges,
    )


def predicate_operator(g: EventGraph, predicate: int) -> PredicateOperator:
    diag = np.fromiter(
        (f.predicate == predicate for f in g.tkg.facts),
        dtype=bool,
        count=g.num_events,
    )
    return PredicateOperator(predicate=predicate, diag=diag)


def edge_operator(g: EventGraph, tr: TemporalRelation) -> EdgeOperator:
    """Build the boolean walk matrix for one temporal relation.

    Row n, column m holds when the entity edge m -> n exists and the relation
    holds from interval(m) to interval(n). The catch-all relation admits pairs
    with unknown endpoints; the three strict relations require fully known
    intervals on both sides.
    """
    rows: list[int] = []
    cols: list[int] = []
    for m in range(g.num_events):
        i_m = g.interval(m)
        for n in g.successors[m]:
            if relation_holds(tr, i_m, g.interval(int(n))):
                rows.append(int(n))
                cols.append(m)
    n_ev = g.num_events
    matrix = sparse.csc_matrix(
        (np.ones(len(rows), dtype=bool), (rows, cols)), shape=(n_ev, n_ev)
    )
    return EdgeOperator(relation=tr, matrix=matrix)


def all_edge_operators(g: EventGraph) -> dict[TemporalRelation, EdgeOperator]:
    return {tr: edge_operator(g, tr) for tr in RELATIONS}


def path_to_walk(g: EventGraph, path: list[int]) -> tuple[list[int], list[int]]:
    """Translate an event path into the entity walk it corresponds to.

    Returns (entities, facts) where the walk alternates entity, fact, entity:
    each consecutive event pair must share its connecting entity.
    """
    if not path:
        raise ValueError("empty event path")
    facts = [g.tkg.facts[m] for m in path]
    entities = [facts[0].subject]
    for prev, nxt in zip(facts, facts[1:]):
        if prev.object != nxt.subject:
            raise ValueError(
                f"events {prev.id} and {nxt.id} share no entity edge"
            )
        entities.append(prev.object)
    entities.append(facts[-1].object)
    return entities, [f.id for f in facts]


def dump_event_graph(g: EventGraph, fh: TextIO) -> None:
    """Line-oriented listing of nodes then edges, for debugging and goldens."""
    tkg = g.tkg
    fh.write(f"events\t{g.num_events}\n")
    for fact in tkg.facts:
        s, p, o = tkg.fact_name(fact)
        start = "####" if fact.when.start is None else str(fact.when.start)
        end = "####" if fact.when.end is None else str(fact.when.end)
        kind = "mirror" if g.is_mirror(fact.id) else "base"
        fh.write(f"event\t{fact.id}\t{kind}\t{s}\t{p}\t{o}\t{start}\t{end}\n")
    fh.write(f"timestamps\t{len(g.timestamps)}\n")
    for t in g.timestamps:
        fh.write(f"timestamp\t{int(t)}\n")
    for m, n in g.entity_edges():
        fh.write(f"entity_edge\t{m}\t{n}\n")
    for a, b in g.order_edges:
        fh.write(f"order_edge\t{a}\t{b}\n")
    for m, t, tag in g.time_edges:
        fh.write(f"time_edge\t{m}\t{t}\t{tag}\n")
