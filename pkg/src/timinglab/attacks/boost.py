"""1-of-N recovery by aggregating many weak per-suffix classifiers.

For every adversary suffix q^j the attacker fits a classifier over the N
candidate prompts from calibration traces it generates itself. At
inference it sends the victim's context with each suffix once, scores each
trace with the matching classifier, and sums the class log-scores.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import log_softmax

from ..errors import ConfigError, DataError
from ..trace import Trace
from .features import FeatureSpec, feature_matrix

# (class index, suffix index, repetition) -> trace of that candidate prompt with that suffix
Probe = Callable[[int, int, int], Trace]
# suffix index -> trace of the victim's (unknown) prompt with that suffix
Query = Callable[[int], Trace]


@dataclass
class TemplateClassifier:
    """Gaussian class templates with one pooled diagonal variance."""

    means: np.ndarray  # (N, K)
    var: np.ndarray  # (K,)

    def log_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        d = X[:, None, :] - self.means[None]
        return log_softmax(-0.5 * np.sum(d * d / self.var, axis=2), axis=1)

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "var": self.var.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TemplateClassifier":
        return cls(np.asarray(d["means"], float), np.asarray(d["var"], float))


def fit_template(X: np.ndarray, y: np.ndarray, n_classes: int, var_floor: float) -> TemplateClassifier:
    means = np.stack([X[y == c].mean(axis=0) for c in range(n_classes)])
    resid = X - means[y]
    dof = max(len(X) - n_classes, 1)
    var = np.maximum((resid * resid).sum(axis=0) / dof, var_floor)
    return TemplateClassifier(means, var)


@dataclass
class BoostEnsemble:
    n_classes: int
    features: FeatureSpec
    classifiers: list[TemplateClassifier] = field(default_factory=list)

    @property
    def n_suffixes(self) -> int:
        return len(self.classifiers)

    def suffix_scores(self, j: int, trace: Trace) -> np.ndarray:
        return self.classifiers[j].log_scores(feature_matrix([trace], self.features))[0]

    def to_dict(self) -> dict:
        return {"n_classes": self.n_classes, "features": self.features.to_dict(),
                "classifiers": [c.to_dict() for c in self.classifiers]}

    @classmethod
    def from_dict(cls, d: dict) -> "BoostEnsemble":
        return cls(d["n_classes"], FeatureSpec(**d["features"]), [TemplateClassifier.from_dict(c) for c in d["classifiers"]])


def boost_fit(
    n_classes: int,
    n_suffixes: int,
    probe: Probe,
    *,
    reps: int = 1,
    features: FeatureSpec = FeatureSpec(K=19),
    var_floor: float = 1e-6,
) -> BoostEnsemble:
    if n_classes < 1 or n_suffixes < 1:
        raise ConfigError("bad-boost", "need at least one class and one suffix")
    if reps < 1:
        raise ConfigError("bad-reps", str(reps))
    y = np.repeat(np.arange(n_classes), reps)
    clfs = []
    for j in range(n_suffixes):
        traces = [probe(i, j, r) for i in range(n_classes) for r in range(reps)]
        X = feature_matrix(traces, features)
        clfs.append(fit_template(X, y, n_classes, var_floor))
    return BoostEnsemble(n_classes, features, clfs)


@dataclass
class BoostResult:
    index: int
    scores: np.ndarray  # summed log-scores per class
    per_suffix: np.ndarray  # (n_suffixes,) argmax of each individual classifier


def boost_infer(ens: BoostEnsemble, query: Query, suffixes: Sequence[int] | None = None) -> BoostResult:
    """Query once per suffix, sum class log-scores, take the argmax (lowest index on ties)."""
    js = range(ens.n_suffixes) if suffixes is None else suffixes
    if not len(js):
        raise DataError("no-suffixes")
    total = np.zeros(ens.n_classes)
    singles = []
    for j in js:
        s = ens.suffix_scores(j, query(j))
        total += s
        singles.append(int(np.argmax(s)))
    return BoostResult(int(np.argmax(total)), total, np.array(singles))
