"""Small 1-D convolutional classifier in plain numpy with hand-written backprop.

Shape: conv(C_in->8, w5) -> relu -> conv(8->16, w5) -> relu -> global
average pool -> dense -> logits. Convolutions are "valid" with stride 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import log_softmax

from ..errors import DataError


@dataclass(frozen=True)
class ConvNetConfig:
    channels: tuple[int, int] = (8, 16)
    widths: tuple[int, int] = (5, 5)
    lr: float = 0.01
    epochs: int = 30
    batch: int = 32  # 0 -> full batch
    weight_decay: float = 0.01
    seed: int = 0

    def to_dict(self) -> dict:
        return {"channels": list(self.channels), "widths": list(self.widths), "lr": self.lr, "epochs": self.epochs,
                "batch": self.batch, "weight_decay": self.weight_decay, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ConvNetConfig":
        d = dict(d)
        d["channels"] = tuple(d.get("channels", (8, 16)))
        d["widths"] = tuple(d.get("widths", (5, 5)))
        return cls(**d)


PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


def _conv(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    # x (N, C, L), W (F, C, w) -> (N, F, L - w + 1)
    win = sliding_window_view(x, W.shape[2], axis=2)  # (N, C, L', w)
    return np.einsum("nclw,fcw->nfl", win, W, optimize=True) + b[None, :, None]


def _conv_backward(x: np.ndarray, W: np.ndarray, g: np.ndarray):
    win = sliding_window_view(x, W.shape[2], axis=2)
    dW = np.einsum("nclw,nfl->fcw", win, g, optimize=True)
    db = g.sum(axis=(0, 2))
    # full correlation of g with flipped kernel gives dx
    w = W.shape[2]
    gp = np.pad(g, ((0, 0), (0, 0), (w - 1, w - 1)))
    gwin = sliding_window_view(gp, w, axis=2)  # (N, F, L, w)
    dx = np.einsum("nflw,fcw->ncl", gwin, W[:, :, ::-1], optimize=True)
    return dx, dW, db


@dataclass
class ConvNet:
    params: dict[str, np.ndarray]
    mean: np.ndarray  # per-channel standardisation, (C,)
    std: np.ndarray

    @classmethod
    def init(cls, in_channels: int, n_classes: int, cfg: ConvNetConfig, mean=None, std=None) -> "ConvNet":
        rng = np.random.default_rng(cfg.seed)
        c1, c2 = cfg.channels
        w1, w2 = cfg.widths
        p = {
            "W1": rng.normal(0, np.sqrt(2.0 / (in_channels * w1)), (c1, in_channels, w1)),
            "b1": np.zeros(c1),
            "W2": rng.normal(0, np.sqrt(2.0 / (c1 * w2)), (c2, c1, w2)),
            "b2": np.zeros(c2),
            "W3": rng.normal(0, np.sqrt(1.0 / c2), (c2, n_classes)),
            "b3": np.zeros(n_classes),
        }
        mean = np.zeros(in_channels) if mean is None else np.asarray(mean, float)
        std = np.ones(in_channels) if std is None else np.asarray(std, float)
        return cls(p, mean, std)

    @property
    def min_length(self) -> int:
        return self.params["W1"].shape[2] + self.params["W2"].shape[2] - 1

    def _standardise(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean[None, :, None]) / self.std[None, :, None]

    def forward(self, X: np.ndarray, cache: bool = False):
        p = self.params
        x0 = self._standardise(np.asarray(X, float))
        z1 = _conv(x0, p["W1"], p["b1"])
        a1 = np.maximum(z1, 0)
        z2 = _conv(a1, p["W2"], p["b2"])
        a2 = np.maximum(z2, 0)
        h = a2.mean(axis=2)
        logits = h @ p["W3"] + p["b3"]
        if cache:
            return logits, (x0, z1, a1, z2, a2, h)
        return logits

    def log_proba(self, X: np.ndarray) -> np.ndarray:
        return log_softmax(self.forward(X), axis=1)

    def proba(self, X: np.ndarray) -> np.ndarray:
        return np.exp(self.log_proba(X))

    def loss(self, X: np.ndarray, y: np.ndarray, weight_decay: float = 0.0) -> float:
        lp = self.log_proba(X)
        reg = 0.5 * weight_decay * sum(np.sum(self.params[k] ** 2) for k in ("W1", "W2", "W3"))
        return float(-lp[np.arange(len(y)), y].mean() + reg)

    def gradients(self, X: np.ndarray, y: np.ndarray, weight_decay: float = 0.0) -> dict[str, np.ndarray]:
        p = self.params
        logits, (x0, z1, a1, z2, a2, h) = self.forward(X, cache=True)
        n = len(y)
        g = np.exp(log_softmax(logits, axis=1))
        g[np.arange(n), y] -= 1.0
        g /= n
        grads = {"W3": h.T @ g, "b3": g.sum(axis=0)}
        gh = g @ p["W3"].T
        ga2 = np.repeat(gh[:, :, None], a2.shape[2], axis=2) / a2.shape[2]
        gz2 = ga2 * (z2 > 0)
        ga1, grads["W2"], grads["b2"] = _conv_backward(a1, p["W2"], gz2)
        gz1 = ga1 * (z1 > 0)
        _, grads["W1"], grads["b1"] = _conv_backward(x0, p["W1"], gz1)
        if weight_decay:
            for k in ("W1", "W2", "W3"):
                grads[k] = grads[k] + weight_decay * p[k]
        return grads

    def to_dict(self) -> dict:
        return {"params": {k: v.tolist() for k, v in self.params.items()}, "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ConvNet":
        return cls({k: np.asarray(v, float) for k, v in d["params"].items()}, np.asarray(d["mean"], float), np.asarray(d["std"], float))


@dataclass
class TrainResult:
    net: ConvNet
    losses: list[float] = field(default_factory=list)  # full-data loss after each epoch, starting with the initial loss


def train_convnet(X: np.ndarray, y: np.ndarray, n_classes: int, cfg: ConvNetConfig = ConvNetConfig()) -> TrainResult:
    """X is (N, C, L). Minibatch Adam when ``cfg.batch > 0``; with
    ``batch=0`` full-batch gradient descent with a backtracking step, which
    never increases the training loss."""
    X = np.asarray(X, float)
    y = np.asarray(y, int)
    if X.ndim != 3 or len(X) != len(y) or len(X) == 0:
        raise DataError("bad-training-data", f"expected (N, C, L) features and N labels, got {X.shape}")
    mean = X.mean(axis=(0, 2))
    std = X.std(axis=(0, 2))
    std[std == 0] = 1.0
    net = ConvNet.init(X.shape[1], n_classes, cfg, mean, std)
    if X.shape[2] < net.min_length:
        raise DataError("sequence-too-short", f"length {X.shape[2]} < receptive field {net.min_length}")
    wd = cfg.weight_decay
    losses = [net.loss(X, y, wd)]
    if cfg.batch <= 0:
        lr = cfg.lr
        for _ in range(cfg.epochs):
            g = net.gradients(X, y, wd)
            old = {k: v.copy() for k, v in net.params.items()}
            while True:
                for k in PARAM_NAMES:
                    net.params[k] = old[k] - lr * g[k]
                new = net.loss(X, y, wd)
                if new <= losses[-1] or lr < 1e-12:
                    break
                lr *= 0.5
            if new > losses[-1]:
                net.params = old
                new = losses[-1]
            losses.append(new)
            lr *= 1.5
        return TrainResult(net, losses)
    rng = np.random.default_rng(cfg.seed)
    m = {k: np.zeros_like(v) for k, v in net.params.items()}
    v = {k: np.zeros_like(val) for k, val in net.params.items()}
    b1, b2, eps, t = 0.9, 0.999, 1e-8, 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(X))
        for s in range(0, len(X), cfg.batch):
            idx = order[s:s + cfg.batch]
            g = net.gradients(X[idx], y[idx], wd)
            t += 1
            for k in PARAM_NAMES:
                m[k] = b1 * m[k] + (1 - b1) * g[k]
                v[k] = b2 * v[k] + (1 - b2) * g[k] ** 2
                mhat = m[k] / (1 - b1**t)
                vhat = v[k] / (1 - b2**t)
                net.params[k] = net.params[k] - cfg.lr * mhat / (np.sqrt(vhat) + eps)
        losses.append(net.loss(X, y, wd))
    return TrainResult(net, losses)
