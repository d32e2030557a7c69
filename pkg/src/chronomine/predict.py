"""Applying a trained time scorer to concrete queries.

A query names a (subject, predicate, object) triple; the predictor grounds
the mined patterns around it, scores every candidate time, and reads the
predicted interval off the argmax of each target distribution. Queries that
ground nothing fall back to per-predicate marginal statistics, flagged as
such. Forecast mode rebuilds the backing graph from only the facts that start
strictly before the query's own start, so nothing later ever feeds a score.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence, TextIO

import numpy as np
import torch

from .density import TARGET_DURATION, TARGET_END, TARGET_START, DensityTable, EraPolicy
from .errors import DatasetFormatError
from .eventgraph import EventGraph, build_event_graph
from .learner import (
    MODE_RULE,
    TARGETS,
    Grids,
    ModelArtifact,
    PreparedQuery,
    TimeScoringModel,
    pattern_score,
    prepare_query,
)
from .mining import MinerConfig, RulePattern, query_from_triple
from .tkg import (
    INVERSE_SUFFIX,
    SCHEMA_TIMESTAMP,
    Interval,
    TimeGrid,
    Tkg,
    add_inverse_facts,
    format_time,
    parse_time_token,
)

PREDICTION_FILE_VERSION = "# predictions v1"


def argmax_timestamp(scores: np.ndarray, grid: TimeGrid) -> int:
    """The grid value with the highest score; ties go to the earliest point."""
    scores = np.asarray(scores)
    if scores.shape != (grid.count,):
        raise ValueError("score vector length does not match the grid")
    return grid.value(int(np.argmax(scores)))


def restrict_to_past(base: Tkg, cutoff: int) -> Tkg:
    """Only the facts known to start strictly before the cutoff.

    Facts with an unknown start cannot be shown to lie in the past, so they
    are dropped too. Symbol tables are preserved verbatim, keeping entity and
    predicate ids aligned with a model trained on the full dataset.
    """
    if base.has_inverses:
        raise ValueError("restriction operates on the un-augmented dataset")
    kept = [
        replace(fact, id=idx)
        for idx, fact in enumerate(
            fact
            for fact in base.facts
            if fact.when.start is not None and fact.when.start < cutoff
        )
    ]
    return replace(
        base,
        facts=kept,
        entities=base.entities.copy(),
        predicates=base.predicates.copy(),
        time_min=None,
        time_max=None,
    )


@dataclass(frozen=True)
class Prediction:
    """One query's predicted interval plus everything needed to audit it."""

    subject: str
    predicate: str
    object: str
    interval: Interval
    distributions: dict[str, np.ndarray]
    support: tuple[tuple[str, float], ...]  # (pattern hash, contribution), best first
    fallback: bool
    touched_starts: tuple[int, ...]  # starts of the facts the scoring consulted


@dataclass
class Predictor:
    """Applies a trained scoring model over a fixed background dataset."""

    model: TimeScoringModel
    base: Tkg  # un-augmented: inverses are re-derived per (restricted) graph
    patterns: Sequence[RulePattern]
    table: DensityTable
    miner_cfg: MinerConfig
    grids: Grids
    targets: tuple[str, ...]
    fallback_stats: dict[str, tuple[int, int]]  # predicate -> (mode start, median duration)

    def __post_init__(self):
        if self.base.has_inverses:
            raise ValueError("predictor expects the un-augmented dataset")
        self._graph = build_event_graph(add_inverse_facts(self.base))
        self._era = EraPolicy.for_granularity(self.base.granularity)

    @classmethod
    def from_artifact(
        cls,
        artifact: ModelArtifact,
        base: Tkg,
        patterns: Sequence[RulePattern],
        table: DensityTable,
        miner_cfg: MinerConfig,
    ) -> "Predictor":
        augmented_names = list(base.predicates) + [
            name + INVERSE_SUFFIX for name in base.predicates
        ]
        if artifact.predicate_names != augmented_names:
            raise ValueError("trained model does not match the dataset's predicates")
        return cls(
            model=artifact.build_model(),
            base=base,
            patterns=list(patterns),
            table=table,
            miner_cfg=miner_cfg,
            grids=artifact.grids,
            targets=artifact.targets,
            fallback_stats=dict(artifact.fallback),
        )

    def predict_interval(
        self,
        subject: str,
        predicate: str,
        object: str,
        forecast_cutoff: Optional[int] = None,
    ) -> Prediction:
        """Score one query and assemble its interval (Algorithm-2 style).

        forecast_cutoff, when given, is the query's true start time: only
        facts starting strictly before it may take part in the prediction.
        """
        if predicate not in self.base.predicates:
            raise DatasetFormatError(
                f"query predicate {predicate!r} is unknown to the trained model"
            )
        if forecast_cutoff is None:
            graph = self._graph
        else:
            graph = build_event_graph(
                add_inverse_facts(restrict_to_past(self.base, forecast_cutoff))
            )
        prepared = self._prepare(graph, subject, predicate, object)
        touched = self._touched_starts(graph, prepared)
        if prepared is None or not prepared.has_signal(self.model.mode, self.targets):
            return self._fallback_prediction(subject, predicate, object, touched)
        with torch.no_grad():
            distributions = {
                b: self.model.probabilities(
                    prepared, b, self.grids.for_target(b).count
                ).numpy()
                for b in self.targets
            }
        start = argmax_timestamp(distributions[TARGET_START], self.grids.time)
        if self.base.schema == SCHEMA_TIMESTAMP:
            interval = Interval(start, start)
        elif TARGET_DURATION in self.targets:
            span = argmax_timestamp(distributions[TARGET_DURATION], self.grids.duration)
            interval = Interval(start, start + span)
        else:
            end = argmax_timestamp(distributions[TARGET_END], self.grids.time)
            interval = Interval(start, max(end, start))
        support = self._support(prepared, distributions)
        return Prediction(
            subject=subject,
            predicate=predicate,
            object=object,
            interval=interval,
            distributions=distributions,
            support=support,
            fallback=False,
            touched_starts=touched,
        )

    # -- internals ---------------------------------------------------------

    def _prepare(
        self, graph: EventGraph, subject: str, predicate: str, object: str
    ) -> Optional[PreparedQuery]:
        tkg = graph.tkg
        if subject not in tkg.entities or object not in tkg.entities:
            return None  # an unseen entity can ground nothing
        s_id, o_id = tkg.entities.id(subject), tkg.entities.id(object)
        p_id = tkg.predicates.id(predicate)
        view = query_from_triple(graph, s_id, p_id, o_id)
        excluded = set()
        for event in graph.subject_index.get(s_id, ()):
            event = int(event)
            fact = tkg.facts[event]
            if (fact.subject, fact.predicate, fact.object) == (s_id, p_id, o_id):
                excluded.add(event)
                excluded.add(graph.mirror(event))
        return prepare_query(
            graph,
            view,
            self.patterns,
            self.table,
            self.grids,
            self.miner_cfg,
            self.targets,
            self._era,
            excluded_body=frozenset(excluded),
            max_length=self.model.max_length,
        )

    def _touched_starts(
        self, graph: EventGraph, prepared: Optional[PreparedQuery]
    ) -> tuple[int, ...]:
        if prepared is None:
            return ()
        starts = {
            graph.interval(gid).start
            for gid in prepared.local.global_ids
            if gid >= 0 and graph.interval(gid).start is not None
        }
        return tuple(sorted(starts))

    def _fallback_prediction(
        self, subject: str, predicate: str, object: str, touched: tuple[int, ...]
    ) -> Prediction:
        mode_start, median_duration = self.fallback_stats.get(
            predicate, (self.grids.time.start, 0)
        )
        if self.base.schema == SCHEMA_TIMESTAMP:
            interval = Interval(mode_start, mode_start)
        else:
            interval = Interval(mode_start, mode_start + max(median_duration, 0))
        distributions = {
            b: np.full(
                self.grids.for_target(b).count, 1.0 / self.grids.for_target(b).count
            )
            for b in self.targets
        }
        return Prediction(
            subject=subject,
            predicate=predicate,
            object=object,
            interval=interval,
            distributions=distributions,
            support=(),
            fallback=True,
            touched_starts=touched,
        )

    def _support(
        self, prepared: PreparedQuery, distributions: dict[str, np.ndarray]
    ) -> tuple[tuple[str, float], ...]:
        """Up to three pattern hashes ranked by contribution at the chosen start.

        Under rule-split scoring each grounded pattern contributes an additive
        term, so its value at the predicted start is the contribution. The
        event-split walk mixes patterns non-additively, so there the count of
        grounded paths per pattern stands in.
        """
        blocks = prepared.rule_blocks.get(TARGET_START, [])
        ranked: list[tuple[str, float]] = []
        if self.model.mode == MODE_RULE and blocks:
            idx = int(np.argmax(distributions[TARGET_START]))
            b_idx = TARGETS.index(TARGET_START)
            with torch.no_grad():
                attn = self.model.attention(prepared.orientations[0].head)
                position = self.model.mixing.position_weights(prepared.predicate, b_idx)
                for block in blocks:
                    w_first = self.model.mixing.endpoint_weight(
                        prepared.predicate, b_idx, 1
                    )
                    w_last = self.model.mixing.endpoint_weight(
                        prepared.predicate, b_idx, block.length
                    )
                    g_first = w_first * block.first_start + (1 - w_first) * block.first_end
                    g_last = w_last * block.last_start + (1 - w_last) * block.last_end
                    bracket = position[0] * g_first + position[1] * g_last
                    term = pattern_score(attn, block) * bracket[idx]
                    ranked.append((block.key, float(term)))
        else:
            ranked = [(key, float(n)) for key, n in prepared.pattern_counts.items()]
        ranked.sort(key=lambda item: (-item[1], item[0]))
        return tuple(ranked[:3])


def write_predictions(
    predictions: Sequence[Prediction], fh: TextIO, granularity: str
) -> None:
    fh.write(PREDICTION_FILE_VERSION + "\n")
    fh.write("subject\tpredicate\tobject\tpred_start\tpred_end\tfallback\ttop_rules\n")
    for p in predictions:
        rules = ",".join(key for key, _ in p.support)
        fh.write(
            "\t".join(
                (
                    p.subject,
                    p.predicate,
                    p.object,
                    format_time(p.interval.start, granularity),
                    format_time(p.interval.end, granularity),
                    str(int(p.fallback)),
                    rules,
                )
            )
            + "\n"
        )


def read_predictions(
    fh: TextIO, granularity: str
) -> list[tuple[tuple[str, str, str], Interval, bool, tuple[str, ...]]]:
    """Rows of ((subject, predicate, object), interval, fallback, rule hashes)."""
    rows = []
    saw_version = False
    for lineno, raw in enumerate(fh, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            saw_version = saw_version or line == PREDICTION_FILE_VERSION
            continue
        cols = line.split("\t")
        if cols[0] == "subject":
            continue  # header row
        if len(cols) != 7:
            raise DatasetFormatError("prediction rows carry seven columns", lineno)
        interval = Interval(
            parse_time_token(cols[3], granularity), parse_time_token(cols[4], granularity)
        )
        rules = tuple(r for r in cols[6].split(",") if r)
        rows.append(((cols[0], cols[1], cols[2]), interval, cols[5] == "1", rules))
    if not saw_version:
        raise DatasetFormatError("missing predictions version header")
    return rows
