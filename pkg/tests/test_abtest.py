import warnings

import numpy as np
import pytest

from timinglab.attacks.abtest import AbAttack, AttackConfig, ab_accuracy, fit_ab, score_ab
from timinglab.attacks.features import FeatureSpec
from timinglab.errors import DataError
from timinglab.specsim import NS_PER_MS
from timinglab.trace import Trace

MS = NS_PER_MS


def constant_trace(gap_ms, n=30, jitter=0.0, rng=None):
    gaps = np.full(n - 1, gap_ms * MS, float)
    if jitter:
        gaps = gaps * np.exp(rng.normal(0, jitter, n - 1))
    ts = np.r_[0, np.cumsum(gaps)].astype(np.int64)
    return Trace(ts, [200] * n, [True] * n)


def test_constant_delays_perfectly_separated():
    rng = np.random.default_rng(0)
    A = [constant_trace(5, jitter=0.05, rng=rng) for _ in range(40)]
    B = [constant_trace(25, jitter=0.05, rng=rng) for _ in range(40)]
    pair = fit_ab(A[:20], B[:20], AttackConfig(FeatureSpec(K=20)))
    assert ab_accuracy(pair, A[20:], B[20:]) == 1.0
    assert score_ab(A[25], pair) < 0 < score_ab(B[25], pair)


def test_identical_classes_near_chance():
    rng = np.random.default_rng(1)
    accs = []
    for rep in range(20):
        X = [constant_trace(15, jitter=0.3, rng=rng) for _ in range(80)]
        pair = fit_ab(X[:20], X[20:40], AttackConfig(FeatureSpec(K=10)))
        accs.append(ab_accuracy(pair, X[40:60], X[60:]))
    assert abs(np.mean(accs) - 0.5) <= 0.05


def test_class_errors_and_imbalance_warning():
    t = [constant_trace(5)] * 20
    with pytest.raises(DataError, match="empty-class"):
        fit_ab([], t)
    with pytest.raises(DataError, match="too-few-traces"):
        fit_ab(t[:5], t)
    rng = np.random.default_rng(2)
    big = [constant_trace(5, jitter=0.1, rng=rng) for _ in range(220)]
    with pytest.warns(UserWarning, match="imbalance"):
        fit_ab(big, big[:20])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit_ab(big[:40], big[40:60])


def test_model_round_trip_keeps_scores_and_labels():
    rng = np.random.default_rng(3)
    A = [constant_trace(5, jitter=0.1, rng=rng) for _ in range(20)]
    B = [constant_trace(9, jitter=0.1, rng=rng) for _ in range(20)]
    pair = fit_ab(A, B, labels=("easy", "rand"))
    back = AbAttack.from_dict(pair.to_dict())
    assert back.labels == ("easy", "rand")
    assert np.allclose(back.scores(A + B), pair.scores(A + B))
    cfg = AttackConfig(FeatureSpec(K=3, mode="tokens"), per_token_bytes=152.0)
    assert AttackConfig.from_dict(cfg.to_dict()) == cfg
