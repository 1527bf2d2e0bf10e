from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..errors import DataError
from ..gmm import bic, fit_gmm
from ..trace import Trace

SIGMA_FLOOR_BYTES = 0.5


def ipd(trace: Trace) -> np.ndarray:
    """Inter-packet delays in ns, ``ts[j+1] - ts[j]``."""
    if len(trace) < 2:
        raise DataError("trace-too-short", f"{trace.stream_id}: {len(trace)} records")
    return np.diff(trace.ts_ns)


@dataclass
class SizeClusterModel:
    means: np.ndarray  # bytes, strictly increasing
    sigmas: np.ndarray  # bytes
    n_fit: int
    # tokens carried by a packet of each cluster; 1..B unless a per-token
    # byte size was supplied at fit time
    counts: np.ndarray = field(default=None)
    selected_by: str = "operator"

    def __post_init__(self):
        self.means = np.asarray(self.means, float)
        self.sigmas = np.asarray(self.sigmas, float)
        if self.counts is None:
            self.counts = np.arange(1, len(self.means) + 1)
        self.counts = np.asarray(self.counts, int)
        if np.any(np.diff(self.means) <= 0):
            raise DataError("bad-cluster-model", "means must be strictly increasing")
        if np.any(self.sigmas <= 0):
            raise DataError("bad-cluster-model", "sigmas must be > 0")

    @property
    def B(self) -> int:
        return len(self.means)

    def log_density(self, sizes: np.ndarray) -> np.ndarray:
        s = np.asarray(sizes, float)[..., None]
        z = (s - self.means) / self.sigmas
        return -0.5 * z * z - np.log(self.sigmas)

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "sigmas": self.sigmas.tolist(),
            "n_fit": self.n_fit,
            "counts": self.counts.tolist(),
            "selected_by": self.selected_by,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SizeClusterModel":
        return cls(d["means"], d["sigmas"], d["n_fit"], d.get("counts"), d.get("selected_by", "operator"))


def _sizes(traces: Iterable[Trace] | np.ndarray) -> np.ndarray:
    if isinstance(traces, np.ndarray):
        return traces.astype(float)
    parts = [tr.size[tr.s2c] for tr in traces]
    return np.concatenate(parts).astype(float) if parts else np.empty(0)


def fit_size_clusters(
    traces: Iterable[Trace] | np.ndarray,
    B: int | None = None,
    *,
    max_B: int = 12,
    per_token_bytes: float | None = None,
    header_bytes: float = 40.0,
) -> SizeClusterModel:
    """Fit a B-component 1-D Gaussian mixture to server->client packet sizes.

    ``B=None`` selects the component count by BIC over ``1..max_B``. When
    ``per_token_bytes`` is given, clusters are mapped to token counts from
    their size net of ``header_bytes`` instead of by rank, so a capture with
    no single-token packets still gets the right counts.
    """
    x = _sizes(traces)
    if x.size == 0:
        raise DataError("empty-sample", "no server->client packets")
    if B is None:
        n_modes = min(max_B, len(np.unique(x)))
        fits = [_fit_1d(x, b) for b in range(1, n_modes + 1)]
        scores = [bic(g, x) for g, _ in fits]
        best = int(np.argmin(scores))
        model = _to_cluster_model(fits[best][0], len(x), per_token_bytes, header_bytes)
        model.selected_by = "bic"
        return model
    if B < 1:
        raise DataError("bad-components", str(B))
    if B > 1 and len(np.unique(x)) < B:
        raise DataError("degenerate-clusters", f"{len(np.unique(x))} distinct sizes for B={B}")
    if B == 1:
        return SizeClusterModel([x.mean()], [max(x.std(), SIGMA_FLOOR_BYTES)], len(x))
    gmm, _ = _fit_1d(x, B)
    return _to_cluster_model(gmm, len(x), per_token_bytes, header_bytes)


def _fit_1d(x: np.ndarray, b: int):
    uniq = np.unique(x)
    # quantiles of the distinct values: rare large-packet modes still get a seed
    init = np.quantile(uniq, (np.arange(b) + 0.5) / b) if b > 1 else np.array([x.mean()])
    return fit_gmm(x[:, None], b, var_floor=SIGMA_FLOOR_BYTES**2, means_init=init[:, None])


def _to_cluster_model(gmm, n: int, per_token_bytes: float | None, header_bytes: float) -> SizeClusterModel:
    order = np.argsort(gmm.means[:, 0])
    means = gmm.means[order, 0]
    sigmas = np.sqrt(gmm.variances[order, 0])
    keep = np.concatenate([[True], np.diff(means) > 1e-9])  # merged duplicates
    means, sigmas = means[keep], sigmas[keep]
    counts = None
    if per_token_bytes:
        counts = np.maximum(1, np.rint((means - header_bytes) / per_token_bytes)).astype(int)
    return SizeClusterModel(means, sigmas, n, counts)


def tokens_in_packet(size, model: SizeClusterModel):
    """Token count for a packet size: the cluster whose Gaussian density at
    ``size`` is largest (first cluster wins ties). Vectorised over arrays."""
    idx = np.argmax(model.log_density(size), axis=-1)
    out = model.counts[idx]
    return int(out) if np.ndim(out) == 0 else out


@dataclass
class TokenTimingSignature:
    inter_token_delays: np.ndarray  # ns, length total_tokens - 1
    token_counts_per_packet: np.ndarray

    @property
    def n_tokens(self) -> int:
        return int(self.token_counts_per_packet.sum())

    def token_times(self) -> np.ndarray:
        """Cumulative reconstructed time of every token after the first."""
        return np.cumsum(self.inter_token_delays)


def reconstruct_token_delays(trace: Trace, model: SizeClusterModel | None, *, spread: bool = False) -> TokenTimingSignature:
    """Expand packets into tokens. Tokens sharing a packet get zero delay and
    the inter-packet gap is charged to the first token of the later packet
    (``spread=True`` divides the gap evenly over that packet's tokens).
    ``model=None`` treats every packet as one token."""
    tr = trace.server_to_client()
    if len(tr) == 0:
        raise DataError("trace-too-short", f"{trace.stream_id}: no server->client records")
    counts = np.ones(len(tr), int) if model is None else np.atleast_1d(tokens_in_packet(tr.size, model))
    gaps = np.diff(tr.ts_ns)
    pieces = []
    if spread:
        pieces.append(np.zeros(counts[0] - 1, np.int64))
        for g, c in zip(gaps, counts[1:]):
            share = np.full(c, g // c, np.int64)
            share[0] += g - share.sum()
            pieces.append(share)
    else:
        pieces.append(np.zeros(counts[0] - 1, np.int64))
        for g, c in zip(gaps, counts[1:]):
            block = np.zeros(c, np.int64)
            block[0] = g
            pieces.append(block)
    return TokenTimingSignature(np.concatenate(pieces), counts)


def signatures(traces: Sequence[Trace], model: SizeClusterModel | None) -> list[TokenTimingSignature]:
    return [reconstruct_token_delays(t, model) for t in traces]
