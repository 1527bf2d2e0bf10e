"""Passive A/B hypothesis test: one GMM per prompt class over timing features."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..capture.signature import SizeClusterModel, fit_size_clusters
from ..errors import DataError
from ..gmm import DiagGMM, fit_gmm
from ..trace import Trace
from .features import FeatureSpec, feature_matrix

MIN_TRACES = 20
IMBALANCE_WARN = 10.0


@dataclass(frozen=True)
class AttackConfig:
    features: FeatureSpec = field(default_factory=FeatureSpec)
    components: int = 3
    var_floor: float = 1e-6  # s^2, so timing features never get sharper than 1 ms
    # token-mode declustering: fixed B, or None to select by BIC
    size_clusters: int | None = None
    per_token_bytes: float | None = None

    def to_dict(self) -> dict:
        return {
            "features": self.features.to_dict(),
            "components": self.components,
            "var_floor": self.var_floor,
            "size_clusters": self.size_clusters,
            "per_token_bytes": self.per_token_bytes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        d = dict(d)
        d["features"] = FeatureSpec(**d.get("features", {}))
        return cls(**d)


@dataclass
class SignatureGmm:
    gmm: DiagGMM
    features: FeatureSpec
    ll_history: list[float] = field(default_factory=list, repr=False)

    def loglik(self, X: np.ndarray) -> np.ndarray:
        return self.gmm.log_prob(X)

    def to_dict(self) -> dict:
        return {"gmm": self.gmm.to_dict(), "features": self.features.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "SignatureGmm":
        return cls(DiagGMM.from_dict(d["gmm"]), FeatureSpec(**d["features"]))


@dataclass
class AbAttack:
    a: SignatureGmm
    b: SignatureGmm
    size_model: SizeClusterModel | None = None
    labels: tuple[str, str] = ("A", "B")

    @property
    def features(self) -> FeatureSpec:
        return self.a.features

    def featurize(self, traces: Sequence[Trace]) -> np.ndarray:
        return feature_matrix(list(traces), self.features, self.size_model)

    def scores(self, traces: Sequence[Trace]) -> np.ndarray:
        """logL_B - logL_A per trace: negative means A is more likely."""
        X = self.featurize(traces)
        return self.b.loglik(X) - self.a.loglik(X)

    def predict(self, traces: Sequence[Trace], tau: float = 0.0) -> np.ndarray:
        """1 for class B, 0 for class A."""
        return (self.scores(traces) > tau).astype(int)

    def to_dict(self) -> dict:
        return {
            "a": self.a.to_dict(),
            "b": self.b.to_dict(),
            "size_model": None if self.size_model is None else self.size_model.to_dict(),
            "labels": list(self.labels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AbAttack":
        sm = d.get("size_model")
        return cls(
            SignatureGmm.from_dict(d["a"]),
            SignatureGmm.from_dict(d["b"]),
            None if sm is None else SizeClusterModel.from_dict(sm),
            tuple(d.get("labels", ("A", "B"))),
        )


def fit_signature_gmm(X: np.ndarray, features: FeatureSpec, cfg: AttackConfig) -> SignatureGmm:
    k = max(1, min(cfg.components, len(X)))
    gmm, hist = fit_gmm(X, k, var_floor=cfg.var_floor)
    return SignatureGmm(gmm, features, hist)


def _check_classes(counts: dict[str, int]) -> None:
    for name, n in counts.items():
        if n == 0:
            raise DataError("empty-class", f"class {name} has no traces")
        if n < MIN_TRACES:
            raise DataError("too-few-traces", f"class {name} has {n} traces, need >= {MIN_TRACES}")
    hi, lo = max(counts.values()), min(counts.values())
    if hi / lo > IMBALANCE_WARN:
        warnings.warn(f"class imbalance {hi}:{lo} exceeds {IMBALANCE_WARN:g}:1", stacklevel=3)


def fit_size_model_for(traces: Sequence[Trace], cfg: AttackConfig) -> SizeClusterModel | None:
    if cfg.features.mode != "tokens":
        return None
    return fit_size_clusters(traces, cfg.size_clusters, per_token_bytes=cfg.per_token_bytes)


def fit_ab(
    traces_a: Sequence[Trace], traces_b: Sequence[Trace], cfg: AttackConfig | None = None, labels: tuple[str, str] = ("A", "B")
) -> AbAttack:
    cfg = cfg or AttackConfig()
    _check_classes({"A": len(traces_a), "B": len(traces_b)})
    size_model = fit_size_model_for(list(traces_a) + list(traces_b), cfg)
    XA = feature_matrix(list(traces_a), cfg.features, size_model)
    XB = feature_matrix(list(traces_b), cfg.features, size_model)
    return AbAttack(fit_signature_gmm(XA, cfg.features, cfg), fit_signature_gmm(XB, cfg.features, cfg), size_model,
                    (str(labels[0]), str(labels[1])))


def score_ab(trace: Trace, pair: AbAttack) -> float:
    return float(pair.scores([trace])[0])


def ab_accuracy(pair: AbAttack, test_a: Sequence[Trace], test_b: Sequence[Trace], tau: float = 0.0) -> float:
    pa = pair.predict(test_a, tau)
    pb = pair.predict(test_b, tau)
    return float((np.sum(pa == 0) + np.sum(pb == 1)) / (len(pa) + len(pb)))
