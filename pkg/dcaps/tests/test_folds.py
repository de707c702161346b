"""Tests for dcaps.training.folds (group-aware stratified k-fold)."""

import numpy as np
import pytest

from dcaps.core.errors import ConfigError, DataError
from dcaps.training.folds import split_validation, stratified_kfold


def _grouped(class_counts, per_group=1):
    """Labels and group ids with ``class_counts[c]`` groups of class ``c``."""
    labels, groups = [], []
    for cls, n in enumerate(class_counts):
        for g in range(n):
            for _ in range(per_group):
                labels.append(cls)
                groups.append(f"c{cls}g{g}")
    return labels, groups


def _assert_partition(folds, n):
    seen = []
    for fold in folds:
        assert not set(fold.train) & set(fold.test)
        assert set(fold.train) | set(fold.test) == set(range(n))
        seen.extend(fold.test)
    assert sorted(seen) == list(range(n))


def test_six_four_split_in_two():
    labels, groups = _grouped([6, 4])
    folds = stratified_kfold(labels, 2, groups, seed=0)
    for fold in folds:
        test_labels = [labels[i] for i in fold.test]
        assert test_labels.count(0) == 3
        assert test_labels.count(1) == 2


def test_k_equal_groups_is_leave_one_group_out():
    labels, groups = _grouped([3, 3], per_group=2)
    folds = stratified_kfold(labels, 6, groups, seed=1)
    for fold in folds:
        assert len({groups[i] for i in fold.test}) == 1
    _assert_partition(folds, len(labels))


def test_deterministic_in_seed():
    labels, groups = _grouped([10, 10], per_group=3)
    assert stratified_kfold(labels, 5, groups, 3) == stratified_kfold(labels, 5, groups, 3)
    assert stratified_kfold(labels, 5, groups, 3) != stratified_kfold(labels, 5, groups, 4)


def test_too_many_folds_reports_counts():
    labels, groups = _grouped([2, 1])
    with pytest.raises(ConfigError, match="class 0: 2"):
        stratified_kfold(labels, 4, groups, 0)


def test_k_below_two_rejected():
    with pytest.raises(ConfigError):
        stratified_kfold([0, 1], 1, ["a", "b"], 0)


def test_more_folds_than_smallest_class_warns(caplog):
    labels, groups = _grouped([6, 2])
    with caplog.at_level("WARNING"):
        folds = stratified_kfold(labels, 4, groups, 0)
    assert "lack that class" in caplog.text
    _assert_partition(folds, len(labels))


def test_group_with_mixed_classes_rejected():
    with pytest.raises(DataError, match="mixes classes"):
        stratified_kfold([0, 1, 0, 1], 2, ["a", "a", "b", "c"], 0)


def test_length_mismatch_rejected():
    with pytest.raises(DataError):
        stratified_kfold([0, 1], 2, ["a"], 0)


def test_random_configurations_hold_partition_group_and_stratification(subtests):
    rng = np.random.default_rng(2024)
    for case in range(500):
        n_classes = int(rng.integers(2, 4))
        counts = [int(c) for c in rng.integers(2, 12, size=n_classes)]
        k = int(rng.integers(2, min(counts) + 1))
        labels, groups = [], []
        for cls, n in enumerate(counts):
            for g in range(n):
                for _ in range(int(rng.integers(1, 4))):
                    labels.append(cls)
                    groups.append(f"{cls}-{g}")
        order = rng.permutation(len(labels))
        labels = [labels[i] for i in order]
        groups = [groups[i] for i in order]
        folds = stratified_kfold(labels, k, groups, seed=case)

        with subtests.test(case=case):
            _assert_partition(folds, len(labels))
            fold_of = {}
            for fold in folds:
                for i in fold.test:
                    assert fold_of.setdefault(groups[i], fold.index) == fold.index
            for cls, n in enumerate(counts):
                per_fold = [
                    len({groups[i] for i in fold.test if labels[i] == cls}) for fold in folds
                ]
                assert max(per_fold) - min(per_fold) <= 1
                assert sum(per_fold) == n


def test_validation_split_keeps_groups_whole():
    labels, groups = _grouped([5, 5], per_group=2)
    train, val = split_validation(labels, groups, 0.2, seed=0)
    assert set(train).isdisjoint(val)
    assert sorted(train + val) == list(range(len(labels)))
    assert {groups[i] for i in train}.isdisjoint({groups[i] for i in val})
    assert {labels[i] for i in val} == {0, 1}


def test_validation_split_zero_fraction():
    train, val = split_validation([0, 1], ["a", "b"], 0.0, seed=0)
    assert train == [0, 1] and val == []


def test_validation_split_fraction_range():
    with pytest.raises(ConfigError):
        split_validation([0, 1], ["a", "b"], 1.0, seed=0)
