"""Tests for dcaps.evaluation.metrics."""

import itertools

import pytest

from dcaps.core.errors import DataError
from dcaps.evaluation.metrics import ConfusionCounts, format_ratio, metrics


def test_hand_confusion_example():
    m = metrics(ConfusionCounts(tp=3, fp=2, tn=2, fn=1))
    assert (m.acc, m.sen, m.spe) == (0.625, 0.75, 0.5)


def test_all_correct():
    m = metrics(ConfusionCounts(tp=4, tn=5))
    assert m == (1.0, 1.0, 1.0)


def test_no_positives_means_undefined_sensitivity():
    m = metrics(ConfusionCounts(tn=3, fp=1))
    assert m.sen is None
    assert m.spe == 0.75


def test_empty_counts_rejected():
    with pytest.raises(DataError):
        metrics(ConfusionCounts())


def test_negative_counts_rejected():
    with pytest.raises(DataError, match="fp"):
        ConfusionCounts(fp=-1)


def test_swap_symmetry_exchanges_sensitivity_and_specificity():
    for tp, fp, tn, fn in itertools.product(range(4), repeat=4):
        if tp + fp + tn + fn == 0:
            continue
        m = metrics(ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn))
        swapped = metrics(ConfusionCounts(tp=tn, fp=fn, tn=tp, fn=fp))
        assert m.acc == swapped.acc
        assert m.sen == swapped.spe
        assert m.spe == swapped.sen


def test_from_pairs():
    counts = ConfusionCounts.from_pairs([(1, 1), (0, 1), (1, 0), (0, 0), (0, 0)])
    assert counts.to_dict() == {"tp": 1, "fp": 1, "tn": 2, "fn": 1}
    assert counts.total == 5


@pytest.mark.parametrize("value,expected", [(None, "n/a"), (0.625, "62.50"), (1.0, "100.00"), (0.0, "0.00")])
def test_format_ratio(value, expected):
    assert format_ratio(value) == expected
