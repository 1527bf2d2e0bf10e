from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..capture.signature import SizeClusterModel, TokenTimingSignature, ipd, reconstruct_token_delays
from ..errors import ConfigError
from ..trace import Trace

NS_PER_S = 1e9


def featurize(
    delays: TokenTimingSignature | Sequence[int] | np.ndarray,
    K: int = 50,
    pad: float = 0.0,
    sizes: Sequence[int] | np.ndarray | None = None,
) -> np.ndarray:
    """First ``K`` delays in seconds, padded with ``pad``; if ``sizes`` is
    given its first ``K`` entries (bytes, same padding) are appended."""
    if isinstance(delays, TokenTimingSignature):
        delays = delays.inter_token_delays
    d = np.asarray(delays, dtype=float)[:K] / NS_PER_S
    out = np.full(K, pad, dtype=float)
    out[: d.size] = d
    if sizes is None:
        return out
    s = np.asarray(sizes, dtype=float)[:K]
    extra = np.full(K, pad, dtype=float)
    extra[: s.size] = s
    return np.concatenate([out, extra])


@dataclass(frozen=True)
class FeatureSpec:
    K: int = 50
    pad: float = 0.0
    # "ipd": raw server->client inter-packet delays.
    # "tokens": inter-token delays after size declustering.
    mode: str = "ipd"
    with_sizes: bool = False

    def __post_init__(self):
        if self.mode not in ("ipd", "tokens"):
            raise ConfigError("bad-feature-mode", self.mode)
        if self.K < 1:
            raise ConfigError("bad-feature-k", str(self.K))

    def to_dict(self) -> dict:
        return {"K": self.K, "pad": self.pad, "mode": self.mode, "with_sizes": self.with_sizes}


def trace_features(trace: Trace, spec: FeatureSpec, size_model: SizeClusterModel | None = None) -> np.ndarray:
    tr = trace.server_to_client()
    if spec.mode == "tokens":
        if size_model is None:
            raise ConfigError("missing-size-model", "token mode needs a fitted SizeClusterModel")
        delays = reconstruct_token_delays(tr, size_model).inter_token_delays
    else:
        delays = ipd(tr) if len(tr) >= 2 else np.empty(0)
    sizes = tr.size[1:] if spec.with_sizes else None
    return featurize(delays, spec.K, spec.pad, sizes)


def feature_matrix(traces: Sequence[Trace], spec: FeatureSpec, size_model: SizeClusterModel | None = None) -> np.ndarray:
    return np.stack([trace_features(t, spec, size_model) for t in traces]) if traces else np.empty((0, spec.K))
