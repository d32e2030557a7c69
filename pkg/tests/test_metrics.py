"""Metric oracles: hand-computed values, then randomized properties."""

import io

import numpy as np
import pytest

from chronomine.errors import UnknownEndpointError
from chronomine.metrics import (
    EvalReport,
    aeiou,
    evaluate_dataset,
    format_report,
    mae,
    tac,
    vol,
    write_report_tsv,
)
from chronomine.tkg import Interval


def test_vol_counts_units_inclusively():
    assert vol(Interval(2000, 2000)) == 1
    assert vol(Interval(2000, 2004)) == 5
    assert vol(Interval(2018, 2021)) == 4


def test_vol_requires_known_endpoints():
    with pytest.raises(UnknownEndpointError):
        vol(Interval(2000, None))


def test_aeiou_hand_values():
    assert aeiou(Interval(2000, 2005), Interval(2000, 2005)) == pytest.approx(1.0, abs=1e-9)
    # disjoint: numerator floored at 1, hull [2000, 2004] covers 5 units
    assert aeiou(Interval(2000, 2001), Interval(2003, 2004)) == pytest.approx(0.2, abs=1e-9)
    assert aeiou(Interval(1930, 1931), Interval(1930, 1931)) == pytest.approx(1.0, abs=1e-9)
    # partial overlap: intersection [2002, 2004] = 3, hull [2000, 2006] = 7
    assert aeiou(Interval(2000, 2004), Interval(2002, 2006)) == pytest.approx(3 / 7, abs=1e-9)


def test_tac_hand_values():
    assert tac(Interval(1854, 1870), Interval(1863, 1871)) == pytest.approx(0.3, abs=1e-9)
    assert tac(Interval(1955, 1955), Interval(1957, 1957)) == pytest.approx(1 / 3, abs=1e-9)
    assert tac(Interval(10, 20), Interval(10, 20)) == pytest.approx(1.0, abs=1e-9)


def test_mae_hand_values():
    assert mae([10], [13]) == pytest.approx(3.0, abs=1e-9)
    assert mae([0, 10], [2, 6]) == pytest.approx(3.0, abs=1e-9)
    assert mae([5, 5], [5, 5]) == 0.0


def test_mae_rejects_bad_shapes():
    with pytest.raises(ValueError):
        mae([1, 2], [1])
    with pytest.raises(ValueError):
        mae([], [])


def test_metrics_reject_inverted_intervals():
    with pytest.raises(ValueError):
        aeiou(Interval(5, 5), Interval(7, 3))
    with pytest.raises(ValueError):
        tac(Interval(7, 3), Interval(1, 2))


def test_aeiou_properties():
    rng = np.random.default_rng(5)
    for _ in range(300):
        a = sorted(rng.integers(1900, 2000, size=2))
        b = sorted(rng.integers(1900, 2000, size=2))
        t, p = Interval(int(a[0]), int(a[1])), Interval(int(b[0]), int(b[1]))
        score = aeiou(t, p)
        assert 0 < score <= 1
        assert score == pytest.approx(aeiou(p, t), abs=1e-12)  # symmetric
        assert (score == pytest.approx(1.0)) == (t == p)


def test_aeiou_decays_as_disjoint_prediction_recedes():
    truth = Interval(2000, 2001)
    scores = [aeiou(truth, Interval(2003 + d, 2004 + d)) for d in range(20)]
    assert all(x > y for x, y in zip(scores, scores[1:]))


def test_tac_properties():
    rng = np.random.default_rng(6)
    for _ in range(300):
        a = sorted(rng.integers(0, 100, size=2))
        b = sorted(rng.integers(0, 100, size=2))
        t, p = Interval(int(a[0]), int(a[1])), Interval(int(b[0]), int(b[1]))
        score = tac(t, p)
        assert 0 < score <= 1
        assert (score == pytest.approx(1.0)) == (t.start == p.start and t.end == p.end)


def test_mae_translation_invariance():
    rng = np.random.default_rng(8)
    truths = rng.integers(0, 50, size=20).tolist()
    preds = rng.integers(0, 50, size=20).tolist()
    base = mae(truths, preds)
    shifted = mae([t + 7 for t in truths], [p + 7 for p in preds])
    assert base == pytest.approx(shifted, abs=1e-12)


# ---------------------------------------------------------------------------
# dataset evaluation


def _queries():
    return [
        ("a", "works_at", "x"),
        ("b", "works_at", "y"),
        ("c", "born_in", "z"),
    ]


def test_perfect_predictor_maxes_every_metric():
    truths = [Interval(1990, 1994), Interval(1980, 1981), Interval(2000, 2000)]
    lookup = dict(zip(_queries(), truths))
    report = evaluate_dataset(lambda q: lookup[q], _queries(), truths)
    assert report.count == 3
    assert report.skipped == 0
    assert report.means["aeiou"] == pytest.approx(1.0)
    assert report.means["tac"] == pytest.approx(1.0)
    assert report.means["mae"] == 0.0
    assert set(report.by_predicate) == {"works_at", "born_in"}


def test_unknown_truths_are_skipped_and_counted():
    truths = [Interval(1990, 1994), Interval(None, 1981), Interval(2000, None)]
    report = evaluate_dataset(lambda q: Interval(1990, 1994), _queries(), truths)
    assert report.count == 1
    assert report.skipped == 2


def test_all_skipped_yields_empty_report():
    truths = [Interval(None, None)] * 3
    report = evaluate_dataset(lambda q: Interval(0, 0), _queries(), truths)
    assert report.count == 0
    assert report.means == {}
    assert "no queries evaluated" in format_report(report)


def test_report_mae_averages_both_endpoints():
    truths = [Interval(1990, 1994)]
    report = evaluate_dataset(
        lambda q: Interval(1992, 1998), [_queries()[0]], truths
    )
    # endpoint errors 2 and 4 average to 3
    assert report.means["mae"] == pytest.approx(3.0)


def test_report_tsv_layout():
    truths = [Interval(1990, 1994), Interval(1980, 1981), Interval(2000, 2000)]
    lookup = dict(zip(_queries(), truths))
    report = evaluate_dataset(lambda q: lookup[q], _queries(), truths)
    buf = io.StringIO()
    write_report_tsv(report, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("scope\tpredicate")
    assert lines[1].startswith("overall\t*\t3")
    assert any(line.startswith("predicate\tborn_in") for line in lines)


def test_fallback_flags_are_tallied():
    truths = [Interval(1990, 1994), Interval(1980, 1981), Interval(2000, 2000)]
    report = evaluate_dataset(
        lambda q: Interval(1990, 1994), _queries(), truths,
        fallback_flags=[False, True, True],
    )
    assert report.fallback_count == 2
    assert "fallback predictions: 2" in format_report(EvalReport(count=0, fallback_count=2))
