import numpy as np
import pytest

from timinglab.attacks.convnet import PARAM_NAMES, ConvNet, ConvNetConfig, train_convnet
from timinglab.errors import DataError


def toy_data(seed=0, n=24, L=16, C=2, classes=3):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % classes
    X = rng.normal(size=(n, C, L)) + y[:, None, None] * 0.7
    return X, y


def test_gradients_match_finite_differences():
    X, y = toy_data()
    net = ConvNet.init(2, 3, ConvNetConfig(seed=1), X.mean(axis=(0, 2)), X.std(axis=(0, 2)))
    wd = 0.01
    grads = net.gradients(X, y, wd)
    rng = np.random.default_rng(2)
    sizes = np.array([net.params[k].size for k in PARAM_NAMES])
    errs = []
    for _ in range(100):
        k = PARAM_NAMES[rng.choice(len(PARAM_NAMES), p=sizes / sizes.sum())]
        idx = tuple(rng.integers(0, s) for s in net.params[k].shape)
        h = 1e-6
        orig = net.params[k][idx]
        net.params[k][idx] = orig + h
        up = net.loss(X, y, wd)
        net.params[k][idx] = orig - h
        down = net.loss(X, y, wd)
        net.params[k][idx] = orig
        num = (up - down) / (2 * h)
        ana = grads[k][idx]
        errs.append(abs(num - ana) / max(abs(num) + abs(ana), 1e-7))
    assert max(errs) <= 1e-4


def test_full_batch_training_never_increases_loss():
    X, y = toy_data(1)
    res = train_convnet(X, y, 3, ConvNetConfig(batch=0, epochs=40, lr=0.1))
    assert np.all(np.diff(res.losses) <= 1e-6)
    assert res.losses[-1] < res.losses[0]


def test_softmax_normalised_and_deterministic():
    X, y = toy_data(2)
    a = train_convnet(X, y, 3, ConvNetConfig(epochs=5, seed=4))
    b = train_convnet(X, y, 3, ConvNetConfig(epochs=5, seed=4))
    assert np.allclose(a.net.proba(X).sum(axis=1), 1.0)
    assert all(np.array_equal(a.net.params[k], b.net.params[k]) for k in PARAM_NAMES)
    back = ConvNet.from_dict(a.net.to_dict())
    assert np.allclose(back.log_proba(X), a.net.log_proba(X))


def test_learns_separable_classes():
    X, y = toy_data(3, n=90)
    X = X + y[:, None, None] * 2.0
    res = train_convnet(X, y, 3, ConvNetConfig(epochs=30))
    assert np.mean(np.argmax(res.net.log_proba(X), axis=1) == y) >= 0.95


def test_input_errors():
    with pytest.raises(DataError, match="bad-training-data"):
        train_convnet(np.zeros((4, 10)), np.zeros(4), 2)
    with pytest.raises(DataError, match="sequence-too-short"):
        train_convnet(np.zeros((4, 1, 5)), np.zeros(4), 2)
    assert ConvNetConfig.from_dict(ConvNetConfig(epochs=3).to_dict()) == ConvNetConfig(epochs=3)
