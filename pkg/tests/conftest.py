"""Shared test fixtures and small random-graph helpers."""

import numpy as np

from chronomine.tkg import add_inverse_facts, parse_quadruple_file


def random_tkg(
    rng: np.random.Generator,
    n_facts: int = 12,
    n_entities: int = 6,
    n_predicates: int = 3,
    unknown_rate: float = 0.15,
    t_lo: int = 1900,
    t_hi: int = 1960,
):
    """Random interval dataset, parsed and closed under inverses."""
    rows = []
    for _ in range(n_facts):
        s = int(rng.integers(0, n_entities))
        o = int(rng.integers(0, n_entities))
        p = int(rng.integers(0, n_predicates))
        start = int(rng.integers(t_lo, t_hi))
        end = start + int(rng.integers(0, 8))
        start_tok = "####" if rng.random() < unknown_rate else str(start)
        end_tok = "####" if rng.random() < unknown_rate else str(end)
        rows.append(f"e{s}\tp{p}\te{o}\t{start_tok}\t{end_tok}")
    tkg = parse_quadruple_file(rows, schema="interval", granularity="year")
    return add_inverse_facts(tkg)
