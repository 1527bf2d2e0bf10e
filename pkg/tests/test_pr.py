import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from timinglab.attacks.pr import pr_sweep
from timinglab.errors import DataError


def brute_force_point(scores, labels, tau):
    pred = scores > tau
    tp = np.sum(pred & labels)
    return tp / max(1, pred.sum()), tp / labels.sum()


def test_separated_scores_give_perfect_curve():
    c = pr_sweep([-3, -2, -1, 1, 2, 3], [0, 0, 0, 1, 1, 1])
    assert c.auc == 1.0
    assert c.recall_at_precision(1.0) == 1.0


def test_inverted_scores_are_poor():
    c = pr_sweep([3, 2, 1, -1, -2, -3], [0, 0, 0, 1, 1, 1])
    assert c.auc < 0.6
    assert c.recall_at_precision(1.0) == 0.0


def test_random_scores_average_half_over_permutations():
    rng = np.random.default_rng(0)
    s = rng.normal(size=400)
    y = np.r_[np.zeros(200), np.ones(200)]
    # oracle: average precision over label permutations concentrates at the positive rate
    aucs = [pr_sweep(s, rng.permutation(y)).auc for _ in range(50)]
    assert abs(np.mean(aucs) - 0.5) < 0.05


label_st = st.integers(2, 60).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(-5, 5), min_size=n, max_size=n),
        st.lists(st.booleans(), min_size=n, max_size=n).filter(lambda y: 0 < sum(y) < len(y)),
    )
)


@given(label_st)
def test_points_are_achievable_and_recall_monotone(data):
    s, y = np.asarray(data[0], float), np.asarray(data[1])
    c = pr_sweep(s, y)
    assert np.all(np.diff(c.recall) >= 0) and np.all(np.diff(c.thresholds) < 0)
    assert c.recall[-1] == 1.0
    for t, p, r in c.rows():
        bp, br = brute_force_point(s, y, t)
        assert np.isclose(p, bp) and np.isclose(r, br)
    assert 0.0 <= c.auc <= 1.0


def test_errors():
    with pytest.raises(DataError, match="single-class"):
        pr_sweep([1, 2], [1, 1])
    with pytest.raises(DataError, match="bad-scores"):
        pr_sweep([1, 2], [1])
