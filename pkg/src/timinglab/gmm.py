"""Diagonal-covariance Gaussian mixtures fitted by EM.

Used both for 1-D packet-size clustering and for the per-class timing
signature models.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DataError

LOG_2PI = np.log(2 * np.pi)


@dataclass
class DiagGMM:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    variances: np.ndarray  # (K, D)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def component_log_density(self, X: np.ndarray) -> np.ndarray:
        """(N, K) matrix of log N(x_n | mu_k, diag var_k)."""
        X = np.atleast_2d(X)
        diff = X[:, None, :] - self.means[None, :, :]
        return -0.5 * (
            np.sum(diff * diff / self.variances[None], axis=2)
            + np.sum(np.log(self.variances), axis=1)[None]
            + X.shape[1] * LOG_2PI
        )

    def log_prob(self, X: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logsumexp(self.component_log_density(X) + logw[None], axis=1)

    def score(self, X: np.ndarray) -> float:
        return float(np.sum(self.log_prob(X)))

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(), "variances": self.variances.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DiagGMM":
        return cls(np.asarray(d["weights"], float), np.asarray(d["means"], float), np.asarray(d["variances"], float))


def _quantile_init(X: np.ndarray, k: int) -> np.ndarray:
    # order samples along their sum (the only axis for 1-D data) and take the
    # ones sitting at evenly spaced quantiles
    order = np.argsort(X.sum(axis=1), kind="stable")
    idx = order[np.minimum(((np.arange(k) + 0.5) / k * len(X)).astype(int), len(X) - 1)]
    return X[idx].astype(float).copy()


def fit_gmm(
    X: np.ndarray,
    n_components: int,
    *,
    var_floor: float = 1e-6,
    tol: float = 1e-8,
    max_iter: int = 500,
    means_init: np.ndarray | None = None,
) -> tuple[DiagGMM, list[float]]:
    """EM for a diagonal GMM. Returns the model and the per-iteration
    log-likelihood history (evaluated at the parameters entering each E-step).

    Stops when the per-sample log-likelihood changes by less than ``tol``.
    Variances are clipped at ``var_floor``; that clip is the constrained
    M-step optimum, so the likelihood stays monotone.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n == 0:
        raise DataError("empty-sample")
    k = n_components
    if k < 1:
        raise DataError("bad-components", str(k))
    means = _quantile_init(X, k) if means_init is None else np.array(means_init, float).reshape(k, d)
    var0 = np.maximum(X.var(axis=0), var_floor)
    model = DiagGMM(np.full(k, 1.0 / k), means, np.tile(var0, (k, 1)))
    history: list[float] = []
    prev = -np.inf
    for _ in range(max_iter):
        logp = model.component_log_density(X)
        with np.errstate(divide="ignore"):
            joint = logp + np.log(model.weights)[None]
        norm = logsumexp(joint, axis=1)
        ll = float(norm.sum())
        history.append(ll)
        if abs(ll - prev) / n < tol:
            break
        prev = ll
        resp = np.exp(joint - norm[:, None])
        nk = resp.sum(axis=0)
        live = nk > 1e-12
        new_means = model.means.copy()
        new_vars = model.variances.copy()
        new_means[live] = (resp[:, live].T @ X) / nk[live, None]
        for j in np.flatnonzero(live):
            diff = X - new_means[j]
            new_vars[j] = np.maximum((resp[:, j] @ (diff * diff)) / nk[j], var_floor)
        model = DiagGMM(nk / n, new_means, new_vars)
    else:
        history.append(model.score(X))
    return model, history


def bic(model: DiagGMM, X: np.ndarray) -> float:
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[:, None]
    k, d = model.means.shape
    n_params = k * 2 * d + (k - 1)
    return -2 * model.score(X) + n_params * np.log(len(X))
