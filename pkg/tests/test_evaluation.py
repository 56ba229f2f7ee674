import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modechoice.evaluation import (
    confusion_matrix,
    evaluate,
    minority_mean_recall,
    per_mode_report,
    precision_recall_f1,
    weighted_f1,
)
from oracles import weighted_f1_bruteforce

label_lists = st.integers(1, 60).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 11), min_size=n, max_size=n),
                        st.lists(st.integers(0, 11), min_size=n, max_size=n)))


@settings(max_examples=300, deadline=None)
@given(label_lists)
def test_weighted_f1_matches_bruteforce(pair):
    truth, pred = pair
    assert abs(weighted_f1(truth, pred) - weighted_f1_bruteforce(truth, pred)) <= 1e-12


@given(label_lists)
def test_weighted_f1_bounds_and_perfect(pair):
    truth, pred = pair
    assert 0.0 <= weighted_f1(truth, pred) <= 1.0 + 1e-15
    assert weighted_f1(truth, truth) == pytest.approx(1.0, abs=1e-15)


def test_balanced_binary_hand_value():
    truth = [1, 1, 2, 2]
    pred = [1, 2, 2, 2]
    # class 1: P=1, R=.5, F1=2/3; class 2: P=2/3, R=1, F1=.8
    assert weighted_f1(truth, pred) == pytest.approx(0.5 * 2 / 3 + 0.5 * 0.8, abs=1e-15)


def test_class_never_predicted_scores_zero():
    rep = evaluate([3, 3, 4], [4, 4, 4])
    i = rep.labels.index(3)
    assert (rep.precision[i], rep.recall[i], rep.f1[i]) == (0.0, 0.0, 0.0)


def test_confusion_and_weights():
    cm = confusion_matrix([0, 1, 1, 2], [0, 2, 1, 2])
    assert cm.shape == (12, 12) and cm.sum() == 4 and cm[1, 2] == 1
    p, r, f = precision_recall_f1(cm, 2)
    assert (p, r) == (0.5, 1.0) and f == pytest.approx(2 / 3)
    rep = evaluate([0, 1, 1, 2], [0, 2, 1, 2])
    assert rep.weights.sum() == pytest.approx(1.0)
    assert rep.weights[1] == 0.5


def test_exclude_no_click_flag():
    truth, pred = [0, 0, 1, 2], [1, 0, 1, 2]
    rep = evaluate(truth, pred, exclude_no_click=True)
    assert rep.labels == tuple(range(1, 12))
    assert rep.weighted_f1 == pytest.approx(weighted_f1_bruteforce([1, 2], [1, 2], range(1, 12)))
    assert weighted_f1(truth, pred) < 1.0


def test_errors():
    with pytest.raises(ValueError):
        weighted_f1([], [])
    with pytest.raises(ValueError):
        weighted_f1([1, 2], [1])
    with pytest.raises(ValueError):
        weighted_f1([12], [0])
    with pytest.raises(ValueError):
        minority_mean_recall([1, 1], [1, 1], [5])


def test_minority_mean_recall():
    truth = [1, 1, 5, 5, 6, 6]
    pred = [1, 1, 5, 1, 1, 1]
    assert minority_mean_recall(truth, pred, [5, 6, 9]) == pytest.approx(0.25)


def test_report_csv(tmp_path):
    path = tmp_path / "r.csv"
    rep = per_mode_report([0, 2, 2, 1], [0, 2, 1, 1], path=path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["mode_name", "sample_ratio", "f1", "precision", "recall"]
    assert rows[1][0] == "no click" and rows[3][0] == "metro"
    assert rows[-1] == ["weighted_f1", repr(rep.weighted_f1)]
    assert len(rows) == 14
