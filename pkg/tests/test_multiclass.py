import numpy as np
import pytest

from timinglab.attacks.abtest import AttackConfig
from timinglab.attacks.convnet import ConvNetConfig
from timinglab.attacks.features import FeatureSpec
from timinglab.attacks.modelio import model_from_json, model_to_json
from timinglab.attacks.multiclass import Conversation, conversation_scores, fit_multiclass, multi_turn_accuracy
from timinglab.errors import ConfigError, DataError
from timinglab.specsim import NS_PER_MS
from timinglab.trace import Trace


def noisy_trace(gap_ms, rng, n=30, sigma=0.4):
    gaps = gap_ms * NS_PER_MS * np.exp(rng.normal(0, sigma, n - 1))
    return Trace(np.r_[0, np.cumsum(gaps)].astype(np.int64), [200] * n, [True] * n)


def classes(rng, per=30, gaps=(5, 8, 12)):
    return {f"c{g}": [noisy_trace(g, rng) for _ in range(per)] for g in gaps}


CFG = AttackConfig(FeatureSpec(K=16), components=1)


def test_single_class_always_predicted():
    rng = np.random.default_rng(0)
    data = {"only": [noisy_trace(5, rng) for _ in range(10)]}
    clf = fit_multiclass(data, cfg=CFG)
    assert clf.predict([noisy_trace(50, rng)]) == ["only"]
    assert clf.accuracy(data) == 1.0


@pytest.mark.parametrize("arch", ["gmm", "convnet"])
def test_fits_separable_classes_and_round_trips(arch):
    rng = np.random.default_rng(1)
    train, test = classes(rng), classes(rng)
    clf = fit_multiclass(train, arch, CFG, ConvNetConfig(epochs=20))
    assert clf.accuracy(test) >= 0.9
    cm = clf.confusion(test)
    assert cm.sum(axis=1).tolist() == [30, 30, 30]
    back = model_from_json(model_to_json(clf))
    assert np.allclose(back.log_scores(test["c5"]), clf.log_scores(test["c5"]))


def test_one_turn_equals_single_message_accuracy():
    rng = np.random.default_rng(2)
    clf = fit_multiclass(classes(rng), cfg=CFG)
    test = classes(rng, per=20, gaps=(5, 8, 12))
    convs = [Conversation(label, [t]) for label, ts in test.items() for t in ts]
    assert multi_turn_accuracy(clf, convs, 1)[1] == pytest.approx(clf.accuracy(test))


def test_more_turns_help_on_overlapping_classes():
    rng = np.random.default_rng(3)
    gaps = (10, 11, 12)
    train = {f"c{g}": [noisy_trace(g, rng, sigma=0.8) for _ in range(60)] for g in gaps}
    clf = fit_multiclass(train, cfg=CFG)
    convs = [Conversation(f"c{g}", [noisy_trace(g, rng, sigma=0.8) for _ in range(8)]) for g in gaps for _ in range(30)]
    acc = multi_turn_accuracy(clf, convs, [1, 8])
    assert acc[8] > acc[1]
    s = conversation_scores(clf, convs[0], 2)
    assert np.allclose(s, clf.log_scores(convs[0].turns[:2]).sum(axis=0))


def test_errors():
    rng = np.random.default_rng(4)
    with pytest.raises(ConfigError, match="bad-arch"):
        fit_multiclass({"a": [noisy_trace(5, rng)]}, "svm")
    with pytest.raises(DataError, match="empty-class"):
        fit_multiclass({"a": []})
    with pytest.raises(DataError, match="empty-class"):
        fit_multiclass({})
    clf = fit_multiclass({"a": [noisy_trace(5, rng)] * 3}, cfg=CFG)
    with pytest.raises(DataError, match="bad-turns"):
        multi_turn_accuracy(clf, [Conversation("a", [noisy_trace(5, rng)])], 2)
    with pytest.raises(DataError, match="empty-sample"):
        multi_turn_accuracy(clf, [], 1)
