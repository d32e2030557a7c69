"""Synthetic datasets with a planted temporal rule and known gap law.

The generator lays entities on a ring e_0..e_{n-1} and, for each index i,
emits a trigger fact (e_{i+1}, A, e_i) at a random time and a consequence
fact (e_i, B, e_{i+1}) offset by a draw from the configured gap law. The
one-hop cyclic walk from a consequence fact therefore grounds the literal
pattern "head B, body [A]", which mining must recover. Noise facts use a
small pool of fresh predicates so they perturb walks without planting a
competing signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .density import EXPONENTIAL, GAUSSIAN, REFLECTED
from .tkg import (
    GRANULARITY_YEAR,
    SCHEMA_INTERVAL,
    Interval,
    Tkg,
    add_inverse_facts,
    parse_quadruple_file,
    parse_time_token,
)

TRUTH_FILE_VERSION = "# truth-table v1"


@dataclass(frozen=True)
class PlantSpec:
    """Configuration of one planted-rule dataset."""

    n_entities: int
    gap_kind: str = GAUSSIAN
    gap_params: tuple[float, ...] = (10.0, 1.0)
    noise_rate: float = 0.0
    seed: int = 0
    trigger_predicate: str = "triggers"
    consequence_predicate: str = "resolves"
    t_lo: int = 1900
    t_hi: int = 1980
    holdout_fraction: float = 0.2
    duration_mean: float = 3.0
    duration_std: float = 1.0
    noise_predicate_pool: int = 10

    def __post_init__(self):
        if self.n_entities <= 0:
            raise ValueError("need at least one entity")
        if self.gap_kind not in (GAUSSIAN, EXPONENTIAL, REFLECTED):
            raise ValueError(f"unsupported gap law {self.gap_kind!r}")


def _draw_gap(rng: np.random.Generator, spec: PlantSpec) -> int:
    if spec.gap_kind == GAUSSIAN:
        mu, sigma = spec.gap_params
        return round(rng.normal(mu, sigma))
    (rate,) = spec.gap_params
    gap = round(rng.exponential(1.0 / rate))
    return gap if spec.gap_kind == EXPONENTIAL else -gap


def _draw_duration(rng: np.random.Generator, spec: PlantSpec) -> int:
    return max(0, round(rng.normal(spec.duration_mean, spec.duration_std)))


@dataclass
class SynthDataset:
    """Training rows, held-out queries with hidden truths, and metadata."""

    train_rows: list[tuple[str, str, str, Interval]]
    truth_rows: list[tuple[str, str, str, Interval]]
    granularity: str = GRANULARITY_YEAR

    def training_lines(self) -> list[str]:
        return [_format_row(r) for r in self.train_rows]

    def truth_lines(self) -> list[str]:
        return [_format_row(r) for r in self.truth_rows]

    def build_tkg(self) -> Tkg:
        tkg = parse_quadruple_file(
            self.training_lines(), schema=SCHEMA_INTERVAL, granularity=self.granularity
        )
        return add_inverse_facts(tkg)


def _format_row(row: tuple[str, str, str, Interval]) -> str:
    s, p, o, when = row
    return f"{s}\t{p}\t{o}\t{when.start}\t{when.end}"


def generate_planted_tkg(spec: PlantSpec) -> SynthDataset:
    """Emit the planted dataset and the held-out consequence queries."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_entities
    entities = [f"e{i}" for i in range(n)]
    signal: list[tuple[str, str, str, Interval]] = []
    consequence_rows: list[tuple[str, str, str, Interval]] = []
    for i in range(n):
        holder, other = entities[(i + 1) % n], entities[i]
        t_a = int(rng.integers(spec.t_lo, spec.t_hi + 1))
        a_when = Interval(t_a, t_a + _draw_duration(rng, spec))
        signal.append((holder, spec.trigger_predicate, other, a_when))
        t_b = t_a + _draw_gap(rng, spec)
        b_when = Interval(t_b, t_b + _draw_duration(rng, spec))
        consequence_rows.append((other, spec.consequence_predicate, holder, b_when))

    n_noise = round(spec.noise_rate * (len(signal) + len(consequence_rows)))
    pool = max(1, min(spec.noise_predicate_pool, n_noise)) if n_noise else 0
    noise: list[tuple[str, str, str, Interval]] = []
    for j in range(n_noise):
        s, o = rng.choice(len(entities), size=2)
        t = int(rng.integers(spec.t_lo, spec.t_hi + 1))
        noise.append(
            (
                entities[s],
                f"unrelated_{j % pool}",
                entities[o],
                Interval(t, t + _draw_duration(rng, spec)),
            )
        )

    n_held = round(spec.holdout_fraction * n)
    held = set(rng.choice(n, size=n_held, replace=False).tolist()) if n_held else set()
    train_rows = list(signal)
    truth_rows: list[tuple[str, str, str, Interval]] = []
    for i, row in enumerate(consequence_rows):
        (truth_rows if i in held else train_rows).append(row)
    train_rows.extend(noise)
    return SynthDataset(
        train_rows=train_rows, truth_rows=sorted(truth_rows, key=lambda r: r[:3])
    )


def oracle_bayes_mae(spec: PlantSpec) -> float:
    """Lowest reachable MAE on the planted start times: E|X - mu| for the gap law."""
    if spec.gap_kind != GAUSSIAN:
        raise ValueError("closed-form floor available for gaussian gaps only")
    sigma = spec.gap_params[1]
    return sigma * math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class HeterogeneousSpec:
    """Several planted predicate pairs with distinct gap laws and time ranges."""

    pairs: tuple[PlantSpec, ...]
    seed: int = 0

    @classmethod
    def default(cls, n_per_pair: int = 120, seed: int = 0) -> "HeterogeneousSpec":
        laws: list[tuple[str, tuple[float, ...]]] = [
            (GAUSSIAN, (8.0, 2.0)),
            (GAUSSIAN, (25.0, 3.0)),
            (EXPONENTIAL, (0.2,)),
            (GAUSSIAN, (-12.0, 2.0)),
        ]
        pairs = tuple(
            PlantSpec(
                n_entities=n_per_pair,
                gap_kind=kind,
                gap_params=params,
                noise_rate=0.3,
                seed=seed + 100 + k,
                trigger_predicate=f"cause_{k}",
                consequence_predicate=f"effect_{k}",
                t_lo=1860 + 20 * k,
                t_hi=1990,
                duration_mean=2.0 + k,
            )
            for k, (kind, params) in enumerate(laws)
        )
        return cls(pairs=pairs, seed=seed)


def generate_heterogeneous_tkg(spec: HeterogeneousSpec) -> SynthDataset:
    """Merge several planted pairs into one mixed dataset (entities disjoint)."""
    train: list[tuple[str, str, str, Interval]] = []
    truth: list[tuple[str, str, str, Interval]] = []
    for k, pair in enumerate(spec.pairs):
        part = generate_planted_tkg(pair)
        rename = lambda name, k=k: f"p{k}_{name}"
        train.extend((rename(s), p, rename(o), w) for s, p, o, w in part.train_rows)
        truth.extend((rename(s), p, rename(o), w) for s, p, o, w in part.truth_rows)
    return SynthDataset(train_rows=train, truth_rows=sorted(truth, key=lambda r: r[:3]))


def write_dataset(ds: SynthDataset, train_fh: TextIO, truth_fh: TextIO) -> None:
    for line in ds.training_lines():
        train_fh.write(line + "\n")
    truth_fh.write(TRUTH_FILE_VERSION + "\n")
    for line in ds.truth_lines():
        truth_fh.write(line + "\n")


def read_truth_table(
    fh: TextIO, granularity: str = GRANULARITY_YEAR
) -> list[tuple[str, str, str, Interval]]:
    rows: list[tuple[str, str, str, Interval]] = []
    saw_version = False
    for raw in fh:
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            saw_version = saw_version or line == TRUTH_FILE_VERSION
            continue
        s, p, o, start, end = line.split("\t")
        rows.append(
            (
                s,
                p,
                o,
                Interval(
                    parse_time_token(start, granularity),
                    parse_time_token(end, granularity),
                ),
            )
        )
    if not saw_version:
        raise ValueError("missing truth-table version header")
    return rows
