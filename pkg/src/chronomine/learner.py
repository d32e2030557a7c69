"""Differentiable soft rule selection over query-local event graphs.

A query's score over candidate times comes from a relaxed random walk: at
each step, attention vectors softly select which predicates to keep, which
temporal-relation edges to traverse, and how much of the walk history to mix
back in. Two scoring variants share the parameters: event-split scores route
walk mass through per-event conditional densities; rule-split scores weight
each mined pattern by the product of the attention entries that select it.
Training minimizes the negative log-likelihood of the true (grid-snapped)
times by stochastic gradient descent. Attention is parameterized either as
raw per-step logits or through a small recurrent controller.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .density import (
    TARGET_DURATION,
    TARGET_END,
    TARGET_START,
    DensityTable,
    EraPolicy,
    eval_component,
)
from .eventgraph import EventGraph
from .mining import (
    LocalGraph,
    MinerConfig,
    QueryView,
    RulePattern,
    build_local_graph,
    mirror_view,
    pattern_hash,
    query_from_event,
)
from .tkg import (
    RELATIONS,
    SCHEMA_TIMESTAMP,
    Interval,
    TemporalRelation,
    TimeGrid,
    Tkg,
    quantize,
)

logger = logging.getLogger(__name__)

MODE_EVENT = "event"
MODE_RULE = "rule"

TARGETS = (TARGET_START, TARGET_END, TARGET_DURATION)

#: monitor callback: (kind, vector) for every normalized quantity produced
Monitor = Callable[[str, np.ndarray], None]


def active_targets(schema: str, duration: bool) -> tuple[str, ...]:
    """Which time targets are scored: start always; end or duration for intervals."""
    if schema == SCHEMA_TIMESTAMP:
        return (TARGET_START,)
    return (TARGET_START, TARGET_DURATION) if duration else (TARGET_START, TARGET_END)


@dataclass(frozen=True)
class Grids:
    """Candidate grids: absolute times, and nonnegative durations."""

    time: TimeGrid
    duration: TimeGrid

    def for_target(self, b: str) -> TimeGrid:
        return self.duration if b == TARGET_DURATION else self.time


def build_grids(tkg: Tkg, step: int = 1) -> Grids:
    if tkg.time_min is None:
        raise ValueError("cannot build grids for a dataset with no known times")
    return Grids(
        time=quantize(tkg.time_min, tkg.time_max, step),
        duration=quantize(0, max(step, tkg.time_max - tkg.time_min), step),
    )


# ---------------------------------------------------------------------------
# attention


@dataclass
class AttentionState:
    """Per-step soft selections for one walk of maximum length L.

    alphas[i-2] weighs the four temporal-relation operators at step i,
    betas[i-2] the predicates, gammas[i-2] the history states u_0..u_{i-1};
    gamma_final mixes u_0..u_L into the readout state.
    """

    alphas: list[torch.Tensor]
    betas: list[torch.Tensor]
    gammas: list[torch.Tensor]
    gamma_final: torch.Tensor

    def all_vectors(self) -> list[torch.Tensor]:
        return [*self.alphas, *self.betas, *self.gammas, self.gamma_final]

    def validate(self, tol: float = 1e-9) -> None:
        for vec in self.all_vectors():
            total = float(vec.detach().sum())
            if abs(total - 1.0) > tol or float(vec.detach().min()) < 0:
                raise ValueError(f"attention vector not normalized: sum={total}")


def _emit(monitor: Optional[Monitor], kind: str, tensor: torch.Tensor) -> None:
    if monitor is not None:
        monitor(kind, tensor.detach().numpy().copy())


class DirectAttention(nn.Module):
    """Raw logits per oriented head predicate and walk step."""

    def __init__(self, num_predicates: int, max_length: int):
        super().__init__()
        k, length = num_predicates, max_length
        zeros = lambda *shape: nn.Parameter(torch.zeros(*shape, dtype=torch.float64))
        self.num_predicates = k
        self.max_length = length
        self.alpha_logits = zeros(k, max(length - 1, 0), len(RELATIONS))
        self.beta_logits = zeros(k, max(length - 1, 0), k)
        self.gamma_logits = zeros(k, max(length - 1, 0), length)
        self.gamma_final_logits = zeros(k, length + 1)

    def forward(self, head: int, monitor: Optional[Monitor] = None) -> AttentionState:
        alphas, betas, gammas = [], [], []
        for i in range(2, self.max_length + 1):
            alphas.append(torch.softmax(self.alpha_logits[head, i - 2], dim=0))
            betas.append(torch.softmax(self.beta_logits[head, i - 2], dim=0))
            gammas.append(torch.softmax(self.gamma_logits[head, i - 2, :i], dim=0))
        state = AttentionState(
            alphas=alphas,
            betas=betas,
            gammas=gammas,
            gamma_final=torch.softmax(self.gamma_final_logits[head], dim=0),
        )
        for vec in state.all_vectors():
            _emit(monitor, "attention", vec)
        return state


class ControllerAttention(nn.Module):
    """Recurrent controller emitting the attention vectors step by step.

    The cell consumes the head-predicate embedding for steps 1..L and an
    end-of-walk token at step L+1; relation and predicate attention are
    softmax projections of the hidden state, and history attention comes from
    inner products with earlier hidden states (h_0 is the zero state).
    """

    def __init__(
        self,
        num_predicates: int,
        max_length: int,
        hidden_dim: int = 64,
        embed_dim: int = 32,
    ):
        super().__init__()
        self.num_predicates = num_predicates
        self.max_length = max_length
        self.hidden_dim = hidden_dim
        self.end_token = num_predicates
        self.embeddings = nn.Parameter(
            0.1 * torch.randn(num_predicates + 1, embed_dim, dtype=torch.float64)
        )
        self.cell = nn.LSTMCell(embed_dim, hidden_dim, dtype=torch.float64)
        self.relation_proj = nn.Linear(hidden_dim, len(RELATIONS), dtype=torch.float64)
        self.predicate_proj = nn.Linear(hidden_dim, num_predicates, dtype=torch.float64)

    def step(
        self,
        h_prev: torch.Tensor,
        c_prev: torch.Tensor,
        history: Sequence[torch.Tensor],
        x: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """One recurrent update; returns (h, c, alpha, beta, gamma)."""
        if not history:
            raise ValueError("history must contain at least the initial state")
        h, c = self.cell(x.unsqueeze(0), (h_prev.unsqueeze(0), c_prev.unsqueeze(0)))
        h, c = h.squeeze(0), c.squeeze(0)
        alpha = torch.softmax(self.relation_proj(h), dim=0)
        beta = torch.softmax(self.predicate_proj(h), dim=0)
        gamma = torch.softmax(torch.stack([(past * h).sum() for past in history]), dim=0)
        return h, c, alpha, beta, gamma

    def forward(self, head: int, monitor: Optional[Monitor] = None) -> AttentionState:
        h = torch.zeros(self.hidden_dim, dtype=torch.float64)
        c = torch.zeros_like(h)
        history = [h]
        alphas, betas, gammas = [], [], []
        gamma_final = None
        for i in range(1, self.max_length + 2):
            x = self.embeddings[head if i <= self.max_length else self.end_token]
            h, c, alpha, beta, gamma = self.step(h, c, history, x)
            if 2 <= i <= self.max_length:
                alphas.append(alpha)
                betas.append(beta)
                gammas.append(gamma)
            if i == self.max_length + 1:
                gamma_final = gamma
            history.append(h)
        state = AttentionState(
            alphas=alphas, betas=betas, gammas=gammas, gamma_final=gamma_final
        )
        for vec in state.all_vectors():
            _emit(monitor, "attention", vec)
        return state


class MixingWeights(nn.Module):
    """Orientation weights a, anchor-position weights, and start/end weights w.

    All constrained quantities go through a sigmoid or softmax, keyed by the
    queried predicate and the target; initialization gives a = w = 0.5 and a
    uniform position split.
    """

    def __init__(self, num_predicates: int, max_length: int):
        super().__init__()
        zeros = lambda *shape: nn.Parameter(torch.zeros(*shape, dtype=torch.float64))
        self.orientation_logits = zeros(num_predicates, len(TARGETS))
        self.position_logits = zeros(num_predicates, len(TARGETS), 2)
        self.endpoint_logits = zeros(num_predicates, len(TARGETS), max_length)

    def orientation_weight(self, predicate: int, b_idx: int) -> torch.Tensor:
        return torch.sigmoid(self.orientation_logits[predicate, b_idx])

    def position_weights(self, predicate: int, b_idx: int) -> torch.Tensor:
        return torch.softmax(self.position_logits[predicate, b_idx], dim=0)

    def endpoint_weight(self, predicate: int, b_idx: int, position: int) -> torch.Tensor:
        return torch.sigmoid(self.endpoint_logits[predicate, b_idx, position - 1])


# ---------------------------------------------------------------------------
# prepared queries: constants extracted once, reused every epoch


@dataclass
class LocalOps:
    """Local-graph operators as dense float tensors."""

    any: torch.Tensor  # [n, n]
    relations: torch.Tensor  # [|TR|, n, n] in RELATIONS order
    predicate_ids: torch.Tensor  # [n] long
    num_events: int

    @classmethod
    def from_local(cls, local: LocalGraph) -> "LocalOps":
        rel = torch.stack(
            [
                torch.from_numpy(local.operators[tr].astype(np.float64))
                for tr in RELATIONS
            ]
        )
        return cls(
            any=rel[RELATIONS.index(TemporalRelation.ANY)],
            relations=rel,
            predicate_ids=torch.from_numpy(local.predicates.astype(np.int64)),
            num_events=local.num_events,
        )


@dataclass
class EventBlocks:
    """Density rows for events acting as last-path anchors, per position."""

    positions: dict[int, tuple[torch.Tensor, torch.Tensor]]  # pos -> (S, E) [n, R]
    counts: torch.Tensor  # [n], satisfied-pattern count per event


@dataclass
class RuleBlock:
    """One pattern's constants for rule-split scoring of one target."""

    key: str  # pattern hash, for reporting which rules supported a score
    length: int
    body: tuple[int, ...]
    relation_idx: tuple[int, ...]
    first_start: torch.Tensor  # path-averaged density rows, [R]
    first_end: torch.Tensor
    last_start: torch.Tensor
    last_end: torch.Tensor


@dataclass
class PreparedOrientation:
    start_local: int
    head: int
    closure: torch.Tensor  # [n]
    event_blocks: dict[str, EventBlocks]


@dataclass
class PreparedQuery:
    """Everything per-query that does not depend on the parameters."""

    predicate: int
    ops: LocalOps
    orientations: tuple[PreparedOrientation, PreparedOrientation]
    rule_blocks: dict[str, list[RuleBlock]]
    truth_idx: dict[str, int]
    local: LocalGraph
    pattern_counts: dict[str, int] = field(default_factory=dict)

    def has_signal(self, mode: str, targets: Sequence[str]) -> bool:
        if mode == MODE_RULE:
            return any(self.rule_blocks.get(b) for b in targets)
        return any(
            o.event_blocks.get(b) and o.event_blocks[b].positions
            for o in self.orientations
            for b in targets
        )


def _density_rows(
    table: DensityTable,
    h: str,
    head_name: str,
    b: str,
    position: int,
    era: int,
    anchor: Interval,
    grid_points: np.ndarray,
) -> np.ndarray:
    """Inner-mixture components on the grid: stacked (start-row, end-row)."""
    if b == TARGET_DURATION:
        comp = table.lookup(h, head_name, b, position, TARGET_START, era)
        row = np.asarray(eval_component(comp, grid_points.astype(np.float64)))
        return np.stack([row, row])
    f_start = table.lookup(h, head_name, b, position, TARGET_START, era)
    f_end = table.lookup(h, head_name, b, position, TARGET_END, era)
    ts = grid_points.astype(np.float64)
    return np.stack(
        [
            np.asarray(eval_component(f_start, ts - anchor.start)),
            np.asarray(eval_component(f_end, ts - anchor.end)),
        ]
    )


def _event_blocks(
    local: LocalGraph,
    grounded: dict[RulePattern, list],
    head: int,
    table: DensityTable,
    tkg: Tkg,
    grids: Grids,
    targets: Sequence[str],
    era_policy: EraPolicy,
    max_length: int,
) -> dict[str, EventBlocks]:
    n = local.num_events
    acc: dict[str, dict[int, tuple[np.ndarray, np.ndarray]]] = {b: {} for b in targets}
    counts = {b: np.zeros(n) for b in targets}
    for pattern, paths in grounded.items():
        if pattern.head != head or not paths or pattern.length > max_length:
            continue
        h = pattern_hash(pattern, tkg.predicates)
        head_name = tkg.predicates.name(pattern.head)
        last_events = {path.events[-1] for path in paths}
        for gid in last_events:
            m = local.id_map.get(gid)
            if m is None:
                continue
            anchor = local.intervals[m]
            if not anchor.known:
                continue
            era = era_policy.bucket(anchor.start)
            for b in targets:
                grid_points = grids.for_target(b).points
                try:
                    rows = _density_rows(
                        table, h, head_name, b, pattern.length, era, anchor, grid_points
                    )
                except KeyError:
                    continue
                block = acc[b].setdefault(
                    pattern.length,
                    (
                        np.zeros((n, len(grid_points))),
                        np.zeros((n, len(grid_points))),
                    ),
                )
                block[0][m] += rows[0]
                block[1][m] += rows[1]
                counts[b][m] += 1
    out: dict[str, EventBlocks] = {}
    for b in targets:
        out[b] = EventBlocks(
            positions={
                pos: (torch.from_numpy(s), torch.from_numpy(e))
                for pos, (s, e) in acc[b].items()
            },
            counts=torch.from_numpy(counts[b]),
        )
    return out


def _rule_blocks(
    grounded: dict[RulePattern, list],
    head: int,
    table: DensityTable,
    tkg: Tkg,
    grids: Grids,
    targets: Sequence[str],
    era_policy: EraPolicy,
    max_length: int,
) -> dict[str, list[RuleBlock]]:
    out: dict[str, list[RuleBlock]] = {b: [] for b in targets}
    for pattern, paths in grounded.items():
        if pattern.head != head or not paths:
            continue
        if pattern.length > max_length:
            logger.warning("pattern longer than the walk budget skipped")
            continue
        h = pattern_hash(pattern, tkg.predicates)
        head_name = tkg.predicates.name(pattern.head)
        relation_idx = tuple(RELATIONS.index(tr) for tr in pattern.relations)
        for b in targets:
            grid_points = grids.for_target(b).points
            rows = np.zeros((4, len(grid_points)))
            used = 0
            for path in paths:
                first, last = path.intervals[0], path.intervals[-1]
                if not (first.known and last.known):
                    continue
                try:
                    first_rows = _density_rows(
                        table, h, head_name, b, 1,
                        era_policy.bucket(first.start), first, grid_points,
                    )
                    last_rows = _density_rows(
                        table, h, head_name, b, pattern.length,
                        era_policy.bucket(last.start), last, grid_points,
                    )
                except KeyError:
                    continue
                rows[0] += first_rows[0]
                rows[1] += first_rows[1]
                rows[2] += last_rows[0]
                rows[3] += last_rows[1]
                used += 1
            if not used:
                logger.warning("pattern with no usable grounded paths skipped")
                continue
            rows /= used
            out[b].append(
                RuleBlock(
                    key=h,
                    length=pattern.length,
                    body=pattern.body,
                    relation_idx=relation_idx,
                    first_start=torch.from_numpy(rows[0]),
                    first_end=torch.from_numpy(rows[1]),
                    last_start=torch.from_numpy(rows[2]),
                    last_end=torch.from_numpy(rows[3]),
                )
            )
    return out


def prepare_query(
    g: EventGraph,
    query: QueryView,
    patterns: Sequence[RulePattern],
    table: DensityTable,
    grids: Grids,
    miner_cfg: MinerConfig,
    targets: Sequence[str],
    era_policy: EraPolicy,
    truth: Optional[Interval] = None,
    excluded_body: frozenset[int] = frozenset(),
    max_length: int = 3,
) -> PreparedQuery:
    """Ground the patterns around one query and freeze all scoring constants."""
    local, grounded = build_local_graph(g, query, patterns, miner_cfg, excluded_body)
    ops = LocalOps.from_local(local)
    mirror = mirror_view(g, query)
    orientations = []
    for view, start_local in (
        (query, local.query_local),
        (mirror, local.mirror_local),
    ):
        closure = ops.any[start_local, :].clone()
        orientations.append(
            PreparedOrientation(
                start_local=start_local,
                head=view.predicate,
                closure=closure,
                event_blocks=_event_blocks(
                    local, grounded, view.predicate, table, g.tkg, grids,
                    targets, era_policy, max_length,
                ),
            )
        )
    truth_idx: dict[str, int] = {}
    if truth is not None:
        if TARGET_START in targets and truth.start is not None:
            truth_idx[TARGET_START] = grids.time.snap(truth.start)
        if TARGET_END in targets and truth.end is not None:
            truth_idx[TARGET_END] = grids.time.snap(truth.end)
        if TARGET_DURATION in targets and truth.known:
            truth_idx[TARGET_DURATION] = grids.duration.snap(truth.duration)
    pattern_counts = {
        pattern_hash(p, g.tkg.predicates): len(paths)
        for p, paths in grounded.items()
        if paths
    }
    return PreparedQuery(
        predicate=query.predicate,
        ops=ops,
        orientations=(orientations[0], orientations[1]),
        rule_blocks=_rule_blocks(
            grounded, query.predicate, table, g.tkg, grids, targets,
            era_policy, max_length,
        ),
        truth_idx=truth_idx,
        local=local,
        pattern_counts=pattern_counts,
    )


# ---------------------------------------------------------------------------
# forward computation


def walk_forward(
    ops: LocalOps,
    start: int,
    attn: AttentionState,
    max_length: int,
    monitor: Optional[Monitor] = None,
) -> list[torch.Tensor]:
    """Relaxed walk states u_0..u_{L+1} from a one-hot start."""
    u0 = torch.zeros(ops.num_events, dtype=torch.float64)
    u0[start] = 1.0
    states = [u0, ops.any @ u0]
    for i in range(2, max_length + 1):
        gamma = attn.gammas[i - 2]
        mix = gamma @ torch.stack(states[:i])
        selected = attn.betas[i - 2][ops.predicate_ids] * mix
        stepped = attn.alphas[i - 2] @ (ops.relations @ selected)
        states.append(stepped)
    final = attn.gamma_final @ torch.stack(states)
    states.append(final)
    if monitor is not None:
        for u in states:
            _emit(monitor, "walk_state", u)
    return states


def pattern_score(attn: AttentionState, block: RuleBlock) -> torch.Tensor:
    """Product of the attention entries that select this pattern's walk."""
    score = attn.gamma_final[block.length]
    for i in range(2, block.length + 1):
        score = (
            score
            * attn.gammas[i - 2][i - 1]
            * attn.betas[i - 2][block.body[i - 2]]
            * attn.alphas[i - 2][block.relation_idx[i - 2]]
        )
    return score


class TimeScoringModel(nn.Module):
    """Trainable scorer: attention parameters plus mixing weights."""

    def __init__(
        self,
        num_predicates: int,
        max_length: int = 3,
        mode: str = MODE_EVENT,
        controller: bool = False,
        hidden_dim: int = 64,
        embed_dim: int = 32,
    ):
        super().__init__()
        if mode not in (MODE_EVENT, MODE_RULE):
            raise ValueError(f"unknown scoring mode {mode!r}")
        self.mode = mode
        self.num_predicates = num_predicates
        self.max_length = max_length
        self.controller = controller
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        if controller:
            self.attention_net: nn.Module = ControllerAttention(
                num_predicates, max_length, hidden_dim, embed_dim
            )
        else:
            self.attention_net = DirectAttention(num_predicates, max_length)
        self.mixing = MixingWeights(num_predicates, max_length)

    def attention(self, head: int, monitor: Optional[Monitor] = None) -> AttentionState:
        return self.attention_net(head, monitor)

    def score_event_split(
        self, prepared: PreparedQuery, b: str, monitor: Optional[Monitor] = None
    ) -> torch.Tensor:
        b_idx = TARGETS.index(b)
        ys = []
        for orientation in prepared.orientations:
            attn = self.attention(orientation.head, monitor)
            states = walk_forward(prepared.ops, orientation.start_local, attn,
                                  self.max_length)
            blocks = orientation.event_blocks.get(b)
            if blocks is None or not blocks.positions:
                ys.append(None)
                continue
            n = prepared.ops.num_events
            grid_len = next(iter(blocks.positions.values()))[0].shape[1]
            cond = torch.zeros((n, grid_len), dtype=torch.float64)
            for pos, (s_rows, e_rows) in blocks.positions.items():
                w = self.mixing.endpoint_weight(prepared.predicate, b_idx, pos)
                cond = cond + w * s_rows + (1.0 - w) * e_rows
            cond = cond / blocks.counts.clamp(min=1.0).unsqueeze(1)
            ys.append((orientation.closure * states[-1]) @ cond)
        a = self.mixing.orientation_weight(prepared.predicate, b_idx)
        parts = []
        if ys[0] is not None:
            parts.append(a * ys[0])
        if ys[1] is not None:
            parts.append((1.0 - a) * ys[1])
        if not parts:
            return torch.zeros(0, dtype=torch.float64)
        return sum(parts)

    def score_rule_split(
        self, prepared: PreparedQuery, b: str, monitor: Optional[Monitor] = None
    ) -> torch.Tensor:
        blocks = prepared.rule_blocks.get(b, [])
        if not blocks:
            return torch.zeros(0, dtype=torch.float64)
        b_idx = TARGETS.index(b)
        attn = self.attention(prepared.orientations[0].head, monitor)
        position = self.mixing.position_weights(prepared.predicate, b_idx)
        _emit(monitor, "attention", position)
        total = torch.zeros(blocks[0].first_start.shape[0], dtype=torch.float64)
        for block in blocks:
            w_first = self.mixing.endpoint_weight(prepared.predicate, b_idx, 1)
            w_last = self.mixing.endpoint_weight(prepared.predicate, b_idx, block.length)
            g_first = w_first * block.first_start + (1.0 - w_first) * block.first_end
            g_last = w_last * block.last_start + (1.0 - w_last) * block.last_end
            bracket = position[0] * g_first + position[1] * g_last
            total = total + pattern_score(attn, block) * bracket
        return total

    def score(
        self, prepared: PreparedQuery, b: str, monitor: Optional[Monitor] = None
    ) -> torch.Tensor:
        if self.mode == MODE_RULE:
            return self.score_rule_split(prepared, b, monitor)
        return self.score_event_split(prepared, b, monitor)

    def probabilities(
        self,
        prepared: PreparedQuery,
        b: str,
        grid_len: int,
        epsilon: float = 1e-8,
        monitor: Optional[Monitor] = None,
    ) -> torch.Tensor:
        scores = self.score(prepared, b, monitor)
        if scores.shape[0] == 0:
            scores = torch.zeros(grid_len, dtype=torch.float64)
        smoothed = scores + epsilon
        pr = smoothed / smoothed.sum()
        _emit(monitor, "probability", pr)
        return pr

    def query_loss(
        self,
        prepared: PreparedQuery,
        grids: Grids,
        targets: Sequence[str],
        epsilon: float = 1e-8,
        monitor: Optional[Monitor] = None,
    ) -> torch.Tensor:
        total = torch.zeros((), dtype=torch.float64)
        for b in targets:
            if b not in prepared.truth_idx:
                continue
            pr = self.probabilities(
                prepared, b, grids.for_target(b).count, epsilon, monitor
            )
            total = total - torch.log(pr[prepared.truth_idx[b]])
        return total


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    """Gradient-descent settings for the scoring parameters."""

    learning_rate: float = 0.01
    epochs: int = 10
    batch_size: int = 32
    per_predicate_cap: int = 100
    epsilon: float = 1e-8
    duration: bool = False
    validation_fraction: float = 0.2
    mode: str = MODE_EVENT
    controller: bool = False
    hidden_dim: int = 64
    embed_dim: int = 32
    max_length: int = 3
    self_mask: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class TrainResult:
    model: TimeScoringModel
    best_state: dict
    final_state: dict
    history: list[tuple[float, float]]  # (train loss, validation loss) per epoch
    grids: Grids
    targets: tuple[str, ...]

    def load_best(self) -> TimeScoringModel:
        self.model.load_state_dict(self.best_state)
        return self.model


def select_training_queries(
    g: EventGraph,
    targets: Sequence[str],
    cap: int,
    rng: np.random.Generator,
) -> list[int]:
    """Base-fact ids with at least one known target, capped per predicate."""
    by_predicate: dict[int, list[int]] = {}
    for fact in g.tkg.facts[: g.num_base]:
        when = fact.when
        usable = (
            (TARGET_START in targets and when.start is not None)
            or (TARGET_END in targets and when.end is not None)
            or (TARGET_DURATION in targets and when.known)
        )
        if usable:
            by_predicate.setdefault(fact.predicate, []).append(fact.id)
    chosen: list[int] = []
    for predicate in sorted(by_predicate):
        ids = by_predicate[predicate]
        if len(ids) > cap:
            picked = rng.choice(len(ids), size=cap, replace=False)
            ids = [ids[i] for i in sorted(picked)]
        chosen.extend(ids)
    return chosen


def prepare_training_queries(
    g: EventGraph,
    patterns: Sequence[RulePattern],
    table: DensityTable,
    grids: Grids,
    miner_cfg: MinerConfig,
    cfg: TrainConfig,
    era_policy: EraPolicy,
    query_ids: Sequence[int],
) -> list[PreparedQuery]:
    targets = active_targets(g.tkg.schema, cfg.duration)
    prepared = []
    for fact_id in query_ids:
        view = query_from_event(g, fact_id)
        excluded = (
            frozenset({view.event_id, view.mirror_event_id})
            if cfg.self_mask
            else frozenset()
        )
        prepared.append(
            prepare_query(
                g, view, patterns, table, grids, miner_cfg, targets, era_policy,
                truth=g.tkg.facts[fact_id].when,
                excluded_body=excluded,
                max_length=cfg.max_length,
            )
        )
    return prepared


def train(
    g: EventGraph,
    patterns: Sequence[RulePattern],
    table: DensityTable,
    miner_cfg: MinerConfig,
    cfg: TrainConfig,
    seed: int = 0,
    monitor: Optional[Monitor] = None,
    grids: Optional[Grids] = None,
) -> TrainResult:
    """Fit the scoring parameters by SGD on the log-likelihood loss."""
    rng = np.random.default_rng(seed)
    grids = grids or build_grids(g.tkg)
    targets = active_targets(g.tkg.schema, cfg.duration)
    era_policy = EraPolicy.for_granularity(g.tkg.granularity)
    query_ids = select_training_queries(g, targets, cfg.per_predicate_cap, rng)
    prepared = prepare_training_queries(
        g, patterns, table, grids, miner_cfg, cfg, era_policy, query_ids
    )
    prepared = [
        p for p in prepared if p.truth_idx and p.has_signal(cfg.mode, targets)
    ]
    if not prepared:
        raise ValueError("no trainable queries: nothing grounded with a known truth")

    order = rng.permutation(len(prepared))
    n_val = round(cfg.validation_fraction * len(prepared))
    val_set = [prepared[i] for i in order[:n_val]] or prepared
    train_set = [prepared[i] for i in order[n_val:]] or prepared

    torch.manual_seed(seed)
    model = TimeScoringModel(
        num_predicates=len(g.tkg.predicates),
        max_length=cfg.max_length,
        mode=cfg.mode,
        controller=cfg.controller,
        hidden_dim=cfg.hidden_dim,
        embed_dim=cfg.embed_dim,
    )
    optimizer = torch.optim.SGD(model.parameters(), lr=cfg.learning_rate)

    def dataset_loss(queries: Sequence[PreparedQuery]) -> torch.Tensor:
        return sum(
            (model.query_loss(q, grids, targets, cfg.epsilon, monitor) for q in queries),
            start=torch.zeros((), dtype=torch.float64),
        )

    history: list[tuple[float, float]] = []
    best_state = copy.deepcopy(model.state_dict())
    best_val = float(dataset_loss(val_set).detach())
    for _ in range(cfg.epochs):
        epoch_order = rng.permutation(len(train_set))
        train_loss = 0.0
        for lo in range(0, len(train_set), cfg.batch_size):
            batch = [train_set[i] for i in epoch_order[lo : lo + cfg.batch_size]]
            optimizer.zero_grad()
            loss = dataset_loss(batch)
            loss.backward()
            optimizer.step()
            train_loss += float(loss.detach())
        with torch.no_grad():
            val_loss = float(dataset_loss(val_set))
        history.append((train_loss, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_state = copy.deepcopy(model.state_dict())
    return TrainResult(
        model=model,
        best_state=best_state,
        final_state=copy.deepcopy(model.state_dict()),
        history=history,
        grids=grids,
        targets=targets,
    )


# ---------------------------------------------------------------------------
# model artifact


MODEL_FILE_VERSION = "# trained-model v1"


@dataclass
class ModelArtifact:
    """Everything the predictor needs, as one versioned text document."""

    mode: str
    controller: bool
    max_length: int
    hidden_dim: int
    embed_dim: int
    predicate_names: list[str]
    schema: str
    granularity: str
    grids: Grids
    targets: tuple[str, ...]
    state: dict[str, torch.Tensor]
    fallback: dict[str, tuple[int, int]]  # predicate -> (mode start, median duration)
    meta: dict[str, str] = field(default_factory=dict)

    def build_model(self) -> TimeScoringModel:
        model = TimeScoringModel(
            num_predicates=len(self.predicate_names),
            max_length=self.max_length,
            mode=self.mode,
            controller=self.controller,
            hidden_dim=self.hidden_dim,
            embed_dim=self.embed_dim,
        )
        model.load_state_dict(self.state)
        return model


def artifact_from_training(
    result: TrainResult,
    tkg: Tkg,
    fallback: dict[str, tuple[int, int]],
    meta: Optional[dict[str, str]] = None,
    use_best: bool = True,
) -> ModelArtifact:
    model = result.model
    return ModelArtifact(
        mode=model.mode,
        controller=model.controller,
        max_length=model.max_length,
        hidden_dim=model.hidden_dim,
        embed_dim=model.embed_dim,
        predicate_names=list(tkg.predicates),
        schema=tkg.schema,
        granularity=tkg.granularity,
        grids=result.grids,
        targets=result.targets,
        state=result.best_state if use_best else result.final_state,
        fallback=fallback,
        meta=dict(meta or {}),
    )


def _grid_str(grid: TimeGrid) -> str:
    return f"{grid.start},{grid.step},{grid.count}"


def _parse_grid(text: str) -> TimeGrid:
    start, step, count = (int(part) for part in text.split(","))
    return TimeGrid(start=start, step=step, count=count)


def save_model(artifact: ModelArtifact, fh) -> None:
    fh.write(MODEL_FILE_VERSION + "\n")
    meta = dict(artifact.meta)
    meta.update(
        mode=artifact.mode,
        controller=str(int(artifact.controller)),
        max_length=str(artifact.max_length),
        hidden_dim=str(artifact.hidden_dim),
        embed_dim=str(artifact.embed_dim),
        schema=artifact.schema,
        granularity=artifact.granularity,
        targets=",".join(artifact.targets),
        time_grid=_grid_str(artifact.grids.time),
        duration_grid=_grid_str(artifact.grids.duration),
    )
    for key in sorted(meta):
        fh.write(f"# {key}={meta[key]}\n")
    for idx, name in enumerate(artifact.predicate_names):
        fh.write(f"predicate\t{idx}\t{name}\n")
    for name, value in sorted(artifact.fallback.items()):
        fh.write(f"fallback\t{name}\t{value[0]}\t{value[1]}\n")
    for name in sorted(artifact.state):
        tensor = artifact.state[name]
        shape = ",".join(str(d) for d in tensor.shape)
        values = ",".join(repr(v) for v in tensor.detach().numpy().ravel().tolist())
        fh.write(f"param\t{name}\t{shape}\t{values}\n")


def load_model(fh) -> ModelArtifact:
    meta: dict[str, str] = {}
    predicate_names: list[str] = []
    fallback: dict[str, tuple[int, int]] = {}
    state: dict[str, torch.Tensor] = {}
    saw_version = False
    for raw in fh:
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            if line == MODEL_FILE_VERSION:
                saw_version = True
            elif "=" in line:
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value
            continue
        kind, rest = line.split("\t", 1)
        if kind == "predicate":
            idx, name = rest.split("\t")
            assert int(idx) == len(predicate_names)
            predicate_names.append(name)
        elif kind == "fallback":
            name, start, duration = rest.split("\t")
            fallback[name] = (int(start), int(duration))
        elif kind == "param":
            name, shape_text, values_text = rest.split("\t")
            shape = tuple(int(d) for d in shape_text.split(",") if d)
            values = np.fromiter(
                (float(v) for v in values_text.split(",")), dtype=np.float64
            )
            state[name] = torch.from_numpy(values.reshape(shape))
        else:
            raise ValueError(f"unknown model row kind {kind!r}")
    if not saw_version:
        raise ValueError("missing trained-model version header")
    reserved = {
        "mode", "controller", "max_length", "hidden_dim", "embed_dim",
        "schema", "granularity", "targets", "time_grid", "duration_grid",
    }
    return ModelArtifact(
        mode=meta["mode"],
        controller=bool(int(meta["controller"])),
        max_length=int(meta["max_length"]),
        hidden_dim=int(meta["hidden_dim"]),
        embed_dim=int(meta["embed_dim"]),
        predicate_names=predicate_names,
        schema=meta["schema"],
        granularity=meta["granularity"],
        grids=Grids(
            time=_parse_grid(meta["time_grid"]),
            duration=_parse_grid(meta["duration_grid"]),
        ),
        targets=tuple(meta["targets"].split(",")),
        state=state,
        fallback=fallback,
        meta={k: v for k, v in meta.items() if k not in reserved},
    )


# ---------------------------------------------------------------------------
# gradient verification


def finite_difference_check(
    model: TimeScoringModel,
    loss_fn: Callable[[], torch.Tensor],
    step: float = 1e-5,
    scale_floor: float = 1e-5,
) -> float:
    """Largest relative disagreement between autograd and central differences.

    Every parameter entry is compared. The denominator is floored so that
    gradients far below the finite-difference resolution (the loss barely
    moves over +-step) cannot register spurious disagreement, while a wrong
    sign or a fabricated gradient at that scale still would.
    """
    model.zero_grad()
    loss_fn().backward()
    worst = 0.0
    for _, parameter in model.named_parameters():
        grad = parameter.grad
        if grad is None:
            continue
        flat = parameter.data.view(-1)
        flat_grad = grad.view(-1)
        for idx in range(flat.numel()):
            original = flat[idx].item()
            flat[idx] = original + step
            upper = float(loss_fn().detach())
            flat[idx] = original - step
            lower = float(loss_fn().detach())
            flat[idx] = original
            numeric = (upper - lower) / (2 * step)
            analytic = flat_grad[idx].item()
            scale = max(abs(numeric), abs(analytic), scale_floor)
            worst = max(worst, abs(numeric - analytic) / scale)
    return worst
