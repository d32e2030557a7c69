"""Temporal knowledge graph core: facts, intervals, parsing, inverse closure.

A dataset is a list of quadruples (subject, predicate, object, interval) over
integer time points. All time points in one dataset share a single granularity:
calendar years, or days since 1970-01-01. Unknown interval endpoints are kept
as None and written back out with the ``####`` sentinel.
"""

from __future__ import annotations

import datetime
import enum
import re
from dataclasses import dataclass, replace
from typing import Iterable, Optional, TextIO

import numpy as np

from .errors import DatasetFormatError, UnknownEndpointError

GRANULARITY_YEAR = "year"
GRANULARITY_DAY = "day"

SCHEMA_INTERVAL = "interval"
SCHEMA_TIMESTAMP = "timestamp"

UNKNOWN_TOKEN = "####"
INVERSE_SUFFIX = "^-1"

_EPOCH_ORDINAL = datetime.date(1970, 1, 1).toordinal()
_INT_RE = re.compile(r"-?\d+")
_DATE_RE = re.compile(r"(-?\d+)-(\d{2}|##)-(\d{2}|##)")


def normalize_granularity(text: str) -> str:
    """Map accepted granularity spellings ('year', '1 day', ...) to a constant."""
    token = text.strip().lower()
    if token in ("year", "1 year", "years"):
        return GRANULARITY_YEAR
    if token in ("day", "1 day", "days"):
        return GRANULARITY_DAY
    raise DatasetFormatError(f"unsupported granularity {text!r}")


def parse_time_token(token: str, granularity: str) -> Optional[int]:
    """Parse one time field into granularity units, or None when unknown.

    Accepts integer years (year granularity), integer day offsets (day
    granularity), and ISO-style dates. Any field containing the ``####``
    sentinel is an unknown endpoint.
    """
    tok = token.strip()
    if not tok:
        raise DatasetFormatError("empty time field")
    if UNKNOWN_TOKEN in tok:
        return None
    if _INT_RE.fullmatch(tok):
        return int(tok)
    m = _DATE_RE.fullmatch(tok)
    if m is None:
        raise DatasetFormatError(f"unparseable time field {tok!r}")
    year_part, month_part, day_part = m.groups()
    if granularity == GRANULARITY_YEAR:
        return int(year_part)
    if "##" in (month_part, day_part):
        raise DatasetFormatError(
            f"day-granularity field {tok!r} has a partially unknown date"
        )
    date = datetime.date(int(year_part), int(month_part), int(day_part))
    return date.toordinal() - _EPOCH_ORDINAL


def format_time(value: Optional[int], granularity: str) -> str:
    if value is None:
        return UNKNOWN_TOKEN
    if granularity == GRANULARITY_DAY:
        return datetime.date.fromordinal(_EPOCH_ORDINAL + value).isoformat()
    return str(value)


class TemporalRelation(enum.Enum):
    """Relation between two intervals: the current fact's and the next fact's."""

    BEFORE = "before"
    OVERLAP = "overlap"
    AFTER = "after"
    ANY = "any"

    def __str__(self) -> str:  # file-format name
        return self.value


#: Operator ordering shared by walk attention and the edge operators.
RELATIONS = (
    TemporalRelation.BEFORE,
    TemporalRelation.OVERLAP,
    TemporalRelation.AFTER,
    TemporalRelation.ANY,
)


@dataclass(frozen=True)
class Interval:
    """Closed interval in granularity units; None marks an unknown endpoint."""

    start: Optional[int]
    end: Optional[int]

    @property
    def known(self) -> bool:
        return self.start is not None and self.end is not None

    @property
    def duration(self) -> int:
        if not self.known:
            raise UnknownEndpointError("duration of an interval with unknown endpoint")
        return self.end - self.start


def temporal_relation(a: Interval, b: Interval) -> TemporalRelation:
    """Classify the ordering of interval ``a`` against interval ``b``.

    Strictly-before, strictly-after, and everything else (including boundary
    touch) as overlap. Raises when a needed endpoint is unknown.
    """
    if not (a.known and b.known):
        raise UnknownEndpointError("temporal relation over unknown endpoints")
    if a.end < b.start:
        return TemporalRelation.BEFORE
    if a.start > b.end:
        return TemporalRelation.AFTER
    return TemporalRelation.OVERLAP


def relation_holds(tr: TemporalRelation, a: Interval, b: Interval) -> bool:
    """Boolean form of the classifier with the catch-all policy applied.

    ANY holds for every pair. The three strict relations hold only when both
    intervals are fully known and classify accordingly.
    """
    if tr is TemporalRelation.ANY:
        return True
    if not (a.known and b.known):
        return False
    return temporal_relation(a, b) is tr


@dataclass(frozen=True)
class Fact:
    """One event: ids into the symbol tables plus its (possibly partial) interval."""

    id: int
    subject: int
    predicate: int
    object: int
    when: Interval


class SymbolTable:
    """Dense first-seen string-to-id mapping, serializable as two-column rows."""

    def __init__(self, names: Iterable[str] = ()):
        self._names: list[str] = []
        self._ids: dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        if name in self._ids:
            return self._ids[name]
        idx = len(self._names)
        self._names.append(name)
        self._ids[name] = idx
        return idx

    def id(self, name: str) -> int:
        return self._ids[name]

    def name(self, idx: int) -> str:
        return self._names[idx]

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __iter__(self):
        return iter(self._names)

    def copy(self) -> "SymbolTable":
        return SymbolTable(self._names)

    def write(self, fh: TextIO) -> None:
        for idx, name in enumerate(self._names):
            fh.write(f"{idx}\t{name}\n")

    @classmethod
    def read(cls, fh: TextIO) -> "SymbolTable":
        table = cls()
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise DatasetFormatError("symbol row needs two columns", lineno)
            idx = table.add(cols[1])
            if idx != int(cols[0]):
                raise DatasetFormatError("symbol ids must be dense and in order", lineno)
        return table


@dataclass
class Tkg:
    """A parsed temporal knowledge graph plus its symbol tables and bounds."""

    facts: list[Fact]
    entities: SymbolTable
    predicates: SymbolTable
    granularity: str
    schema: str
    num_base_predicates: int
    has_inverses: bool = False
    time_min: Optional[int] = None
    time_max: Optional[int] = None

    def __post_init__(self):
        if self.time_min is None and self.time_max is None:
            endpoints = [
                t
                for f in self.facts
                for t in (f.when.start, f.when.end)
                if t is not None
            ]
            if endpoints:
                self.time_min = min(endpoints)
                self.time_max = max(endpoints)

    @property
    def num_facts(self) -> int:
        return len(self.facts)

    def fact_name(self, fact: Fact) -> tuple[str, str, str]:
        return (
            self.entities.name(fact.subject),
            self.predicates.name(fact.predicate),
            self.entities.name(fact.object),
        )


def parse_quadruple_file(
    lines: Iterable[str], schema: str, granularity: str
) -> Tkg:
    """Parse a tab-separated dataset into a Tkg with fresh symbol tables.

    Interval schema rows carry five columns (subject, predicate, object,
    start, end); timestamp rows carry four and become point intervals.
    Lines starting with '#' are comments. Errors name the offending line.
    """
    granularity = normalize_granularity(granularity)
    if schema not in (SCHEMA_INTERVAL, SCHEMA_TIMESTAMP):
        raise DatasetFormatError(f"unsupported schema {schema!r}")
    want_cols = 5 if schema == SCHEMA_INTERVAL else 4

    entities = SymbolTable()
    predicates = SymbolTable()
    facts: list[Fact] = []
    saw_rows = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        saw_rows = True
        cols = line.split("\t")
        if len(cols) != want_cols:
            raise DatasetFormatError(
                f"expected {want_cols} columns, found {len(cols)}", lineno
            )
        try:
            start = parse_time_token(cols[3], granularity)
            end = (
                parse_time_token(cols[4], granularity)
                if schema == SCHEMA_INTERVAL
                else start
            )
        except DatasetFormatError as exc:
            raise DatasetFormatError(str(exc), lineno) from None
        if start is not None and end is not None and start > end:
            raise DatasetFormatError(
                f"interval start {start} exceeds end {end}", lineno
            )
        facts.append(
            Fact(
                id=len(facts),
                subject=entities.add(cols[0]),
                predicate=predicates.add(cols[1]),
                object=entities.add(cols[2]),
                when=Interval(start, end),
            )
        )
    if not saw_rows:
        raise DatasetFormatError("dataset contains no fact rows")
    return Tkg(
        facts=facts,
        entities=entities,
        predicates=predicates,
        granularity=granularity,
        schema=schema,
        num_base_predicates=len(predicates),
    )


def serialize_tkg(tkg: Tkg, fh: TextIO, base_only: bool = False) -> None:
    """Write facts back out in the dataset format, in fact-id order."""
    limit = tkg.num_facts
    if base_only and tkg.has_inverses:
        limit = tkg.num_facts // 2
    for fact in tkg.facts[:limit]:
        s, p, o = tkg.fact_name(fact)
        start = format_time(fact.when.start, tkg.granularity)
        if tkg.schema == SCHEMA_TIMESTAMP:
            fh.write(f"{s}\t{p}\t{o}\t{start}\n")
        else:
            end = format_time(fact.when.end, tkg.granularity)
            fh.write(f"{s}\t{p}\t{o}\t{start}\t{end}\n")


def inverse_predicate(p: int, num_base: int) -> int:
    """Involutive pairing: base predicate p maps to p + num_base and back."""
    return p + num_base if p < num_base else p - num_base


def add_inverse_facts(tkg: Tkg) -> Tkg:
    """Return a new Tkg with one inverse fact appended per base fact.

    Fact i gains a twin at id i + num_facts with subject/object swapped, the
    paired inverse predicate, and the same interval. Calling this on an
    already-augmented graph is an error.
    """
    if tkg.has_inverses:
        raise ValueError("inverse facts already present")
    predicates = tkg.predicates.copy()
    for p in range(tkg.num_base_predicates):
        name = predicates.name(p) + INVERSE_SUFFIX
        if name in predicates:
            raise ValueError(f"inverse predicate name {name!r} collides")
        predicates.add(name)
    n = tkg.num_facts
    facts = list(tkg.facts)
    for fact in tkg.facts:
        facts.append(
            Fact(
                id=fact.id + n,
                subject=fact.object,
                predicate=inverse_predicate(fact.predicate, tkg.num_base_predicates),
                object=fact.subject,
                when=fact.when,
            )
        )
    return replace(
        tkg,
        facts=facts,
        predicates=predicates,
        has_inverses=True,
        time_min=tkg.time_min,
        time_max=tkg.time_max,
    )


@dataclass(frozen=True)
class TimeGrid:
    """Uniform candidate grid: points start, start+step, ..., within the bounds."""

    start: int
    step: int
    count: int

    @property
    def points(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.count, dtype=np.int64)

    def value(self, idx: int) -> int:
        if not 0 <= idx < self.count:
            raise IndexError(f"grid index {idx} out of range")
        return self.start + self.step * idx

    def snap(self, t: int) -> int:
        """Index of the nearest grid point, ties toward the earlier point."""
        offset = t - self.start
        q, r = divmod(offset, self.step)
        idx = q + (1 if 2 * r > self.step else 0)
        return int(min(max(idx, 0), self.count - 1))


def quantize(t_min: int, t_max: int, step: int) -> TimeGrid:
    """Build the candidate grid covering [t_min, t_max] at the given step."""
    if step <= 0:
        raise ValueError("grid step must be positive")
    if t_max < t_min:
        raise ValueError("empty time range")
    return TimeGrid(start=t_min, step=step, count=(t_max - t_min) // step + 1)
