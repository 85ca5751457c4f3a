import itertools
import json

import pytest
from hypothesis import given, settings, strategies as st

from sweeps import INCONSISTENT, all_columns, entries
from vedocr.metrics import (
    BenchmarkReport,
    DatasetResult,
    MetricError,
    aggregate,
    cer,
    cluster_score,
    edit_distance,
    levenshtein_align,
    wer,
)


def brute_min_edits(ref, hyp):
    """Cheapest edit script by enumerating every monotone alignment path."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    return min(
        brute_min_edits(ref[1:], hyp[1:]) + (ref[0] != hyp[0]),
        brute_min_edits(ref[1:], hyp) + 1,
        brute_min_edits(ref, hyp[1:]) + 1,
    )


def all_pairs(max_total=8, alphabet="ab"):
    for n in range(max_total + 1):
        for m in range(max_total + 1 - n):
            for ref in itertools.product(alphabet, repeat=n):
                for hyp in itertools.product(alphabet, repeat=m):
                    yield ref, hyp


def test_alignment_minimal_against_enumeration():
    count = 0
    for ref, hyp in all_pairs():
        c = levenshtein_align(ref, hyp)
        assert c.errors == brute_min_edits(ref, hyp)
        assert c.N == len(ref) == c.S + c.D + c.C
        assert c.hyp_len == len(hyp)
        count += 1
    assert count > 1000


def test_three_symbol_alphabet_short_sequences():
    for ref, hyp in all_pairs(max_total=6, alphabet="abc"):
        assert edit_distance(ref, hyp) == brute_min_edits(ref, hyp)


def test_worked_alignment():
    c = levenshtein_align("a b c".split(), "a x c d".split())
    assert (c.S, c.D, c.I, c.C, c.N) == (1, 0, 1, 2, 3)
    c = levenshtein_align("a b".split(), [])
    assert (c.S, c.D, c.I, c.C) == (0, 2, 0, 0)


def test_tie_break_prefers_substitution():
    c = levenshtein_align(["a"], ["b"])
    assert (c.S, c.D, c.I) == (1, 0, 0)


def test_wer_and_cer_values():
    assert wer("a b c", "a b c") == 0.0
    assert wer("a b c", "a x c d") == pytest.approx(2 / 3)
    assert wer("a", "x y") == 2.0
    assert wer("a  b\tc", "a b c") == 0.0
    assert cer("ab", "ax") == 0.5
    assert cer("ab", "") == 1.0
    assert cer("بَ", "ب") == 0.5  # the diacritic is its own character


def test_empty_reference_rejected():
    with pytest.raises(MetricError):
        wer("   ", "x")
    with pytest.raises(MetricError):
        cer("", "x")


@settings(max_examples=60, deadline=None)
@given(*(st.lists(st.sampled_from("abc"), max_size=5) for _ in range(3)))
def test_triangle_inequality(a, b, c):
    assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)


@pytest.mark.parametrize("column", sorted(all_columns()))
def test_aggregate_reproduces_overall_rows(column):
    cells, (hwr, ocr, midad) = all_columns()[column]
    rep = aggregate(entries(cells))
    for key, want, got in (("hwr", hwr, rep.hwr_score), ("ocr", ocr, rep.ocr_score), ("midad", midad, rep.midad_score)):
        if (column, key) in INCONSISTENT:
            assert abs(got - want) > 0.01
        else:
            assert abs(got - want) <= 0.01, (column, key, got, want)


def test_midad_is_not_mean_of_cluster_scores():
    rep = aggregate([("a", "HWR", 2.0), ("b", "HWR", 4.0), ("c", "OCR", 9.0)])
    assert rep.hwr_score == 3.0
    assert rep.midad_score == 5.0


def test_single_dataset_and_missing_cluster():
    rep = aggregate([("only", "OCR", 7.5)])
    assert rep.ocr_score == rep.midad_score == 7.5
    assert rep.hwr_score is None
    with pytest.raises(MetricError):
        cluster_score(rep, "HWR")
    with pytest.raises(MetricError):
        aggregate([])


def test_report_json_roundtrip_and_table():
    rep = aggregate([DatasetResult("s", "HWR", 12.5, 3.0, 10), DatasetResult("t", "OCR", 1.0, 0.5, 4)])
    back = BenchmarkReport.from_dict(json.loads(rep.to_json()))
    assert back == rep
    text = rep.to_text()
    assert "MIDAD score" in text and "12.50" in text
