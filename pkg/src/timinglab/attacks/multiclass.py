"""Which of C prompt classes produced a trace (topic, language, ...)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np
from scipy.special import log_softmax

from ..errors import ConfigError, DataError
from ..gmm import DiagGMM
from ..trace import Trace
from .abtest import AttackConfig, fit_signature_gmm, fit_size_model_for
from .convnet import ConvNet, ConvNetConfig, train_convnet
from .features import FeatureSpec, feature_matrix
from ..capture.signature import SizeClusterModel


@dataclass
class SignatureClassifier:
    classes: list
    arch: str  # "gmm" | "convnet"
    features: FeatureSpec
    gmms: list[DiagGMM] = field(default_factory=list)
    net: ConvNet | None = None
    size_model: SizeClusterModel | None = None
    train_losses: list[float] = field(default_factory=list, repr=False)

    def featurize(self, traces: Sequence[Trace]) -> np.ndarray:
        return feature_matrix(list(traces), self.features, self.size_model)

    def log_scores(self, traces: Sequence[Trace]) -> np.ndarray:
        """(N, C) class log-posteriors under a uniform prior."""
        X = self.featurize(traces)
        if self.arch == "gmm":
            ll = np.stack([g.log_prob(X) for g in self.gmms], axis=1)
            return log_softmax(ll, axis=1)
        return self.net.log_proba(_as_channels(X, self.features))

    def predict_index(self, traces: Sequence[Trace]) -> np.ndarray:
        return np.argmax(self.log_scores(traces), axis=1)  # first index wins ties

    def predict(self, traces: Sequence[Trace]) -> list:
        return [self.classes[i] for i in self.predict_index(traces)]

    def accuracy(self, traces_by_class: Mapping[Hashable, Sequence[Trace]]) -> float:
        hit = n = 0
        for label, traces in traces_by_class.items():
            hit += sum(p == label for p in self.predict(traces))
            n += len(traces)
        return hit / n

    def confusion(self, traces_by_class: Mapping[Hashable, Sequence[Trace]]) -> np.ndarray:
        cm = np.zeros((len(self.classes), len(self.classes)), int)
        for label, traces in traces_by_class.items():
            i = self.classes.index(label)
            for j in self.predict_index(traces):
                cm[i, j] += 1
        return cm

    def to_dict(self) -> dict:
        return {
            "classes": self.classes,
            "arch": self.arch,
            "features": self.features.to_dict(),
            "gmms": [g.to_dict() for g in self.gmms],
            "net": None if self.net is None else self.net.to_dict(),
            "size_model": None if self.size_model is None else self.size_model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SignatureClassifier":
        return cls(
            d["classes"], d["arch"], FeatureSpec(**d["features"]),
            [DiagGMM.from_dict(g) for g in d.get("gmms", [])],
            None if d.get("net") is None else ConvNet.from_dict(d["net"]),
            None if d.get("size_model") is None else SizeClusterModel.from_dict(d["size_model"]),
        )


def _as_channels(X: np.ndarray, spec: FeatureSpec) -> np.ndarray:
    # [delays | sizes] -> (N, channels, K)
    return X.reshape(len(X), 2 if spec.with_sizes else 1, spec.K)


def fit_multiclass(
    traces_by_class: Mapping[Hashable, Sequence[Trace]],
    arch: str = "gmm",
    cfg: AttackConfig | None = None,
    net_cfg: ConvNetConfig | None = None,
) -> SignatureClassifier:
    cfg = cfg or AttackConfig()
    if arch not in ("gmm", "convnet"):
        raise ConfigError("bad-arch", arch)
    if not traces_by_class:
        raise DataError("empty-class", "no classes")
    classes = list(traces_by_class)
    for c in classes:
        if not traces_by_class[c]:
            raise DataError("empty-class", f"class {c!r} has no traces")
    all_traces = [t for c in classes for t in traces_by_class[c]]
    size_model = fit_size_model_for(all_traces, cfg)
    mats = [feature_matrix(list(traces_by_class[c]), cfg.features, size_model) for c in classes]
    if arch == "gmm":
        gmms = [fit_signature_gmm(X, cfg.features, cfg).gmm for X in mats]
        return SignatureClassifier(classes, arch, cfg.features, gmms=gmms, size_model=size_model)
    X = _as_channels(np.concatenate(mats), cfg.features)
    y = np.concatenate([np.full(len(M), i) for i, M in enumerate(mats)])
    res = train_convnet(X, y, len(classes), net_cfg or ConvNetConfig())
    return SignatureClassifier(classes, arch, cfg.features, net=res.net, size_model=size_model, train_losses=res.losses)


@dataclass
class Conversation:
    label: Hashable
    turns: list[Trace]  # victim-response traces only, in turn order


def conversation_scores(clf: SignatureClassifier, conv: Conversation, turns: int) -> np.ndarray:
    """Summed class log-scores over the first ``turns`` turns."""
    if turns < 1 or turns > len(conv.turns):
        raise DataError("bad-turns", f"conversation has {len(conv.turns)} turns, asked for {turns}")
    return clf.log_scores(conv.turns[:turns]).sum(axis=0)


def multi_turn_accuracy(clf: SignatureClassifier, conversations: Sequence[Conversation], turns: int | Sequence[int]) -> dict[int, float]:
    """Accuracy of argmax summed log-score after t turns, for each requested t."""
    if not conversations:
        raise DataError("empty-sample", "no conversations")
    ts = [turns] if isinstance(turns, int) else list(turns)
    per_conv = [clf.log_scores(c.turns[: max(ts)]) for c in conversations]
    out = {}
    for t in ts:
        if t < 1 or any(len(c.turns) < t for c in conversations):
            raise DataError("bad-turns", f"not every conversation has {t} turns")
        hits = sum(clf.classes[int(np.argmax(s[:t].sum(axis=0)))] == c.label for s, c in zip(per_conv, conversations))
        out[t] = hits / len(conversations)
    return out
