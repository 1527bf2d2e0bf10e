"""Constant-rate output pacing with size-equalised padding.

The server releases exactly one fixed-size packet every ``interval``: the
oldest queued token if one is ready, otherwise a pad. Slot ``j`` leaves at
``j * interval`` after the request. Nothing is ever dropped; a slow interval
just makes the queue (and the latency) grow.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .specsim import NS_PER_MS, GenEvent
from .trace import S2C, Trace
from .wirechan import FrameSpec, PacketRecord

DEFAULT_PAYLOAD_CAP = 32  # bytes of token text a padded slot can carry
PAD = ""  # token slot marker for pad packets


@dataclass(frozen=True)
class DefensePolicy:
    interval_ms: float
    pad_packet_size: int | None = None  # None: header + per-token overhead + payload cap
    max_queue: int | None = None
    flush_at_end: bool = True
    # with flush_at_end=False the stream is padded out to this many slots,
    # which also hides the response length
    horizon_slots: int | None = None
    payload_cap: int = DEFAULT_PAYLOAD_CAP

    def __post_init__(self):
        if not self.interval_ms > 0:
            raise ConfigError("bad-policy", "interval must be > 0")
        if self.max_queue is not None and self.max_queue < 1:
            raise ConfigError("bad-policy", "max_queue must be >= 1")
        if not self.flush_at_end and (self.horizon_slots is None or self.horizon_slots < 1):
            raise ConfigError("bad-policy", "flush_at_end=False needs horizon_slots >= 1")

    @property
    def interval_ns(self) -> int:
        return round(self.interval_ms * NS_PER_MS)

    def packet_size(self, spec: FrameSpec) -> int:
        size = self.pad_packet_size
        if size is None:
            size = spec.header_bytes + spec.per_token_overhead_bytes + self.payload_cap
        if size < spec.header_bytes:
            raise ConfigError("bad-policy", f"pad size {size} below header size {spec.header_bytes}")
        return size

    def to_dict(self) -> dict:
        return {"interval_ms": self.interval_ms, "pad_size": self.pad_packet_size, "flush_at_end": self.flush_at_end,
                "max_queue": self.max_queue, "horizon_slots": self.horizon_slots}

    @classmethod
    def from_dict(cls, d: dict) -> "DefensePolicy":
        unknown = set(d) - {"interval_ms", "pad_size", "flush_at_end", "max_queue", "horizon_slots", "payload_cap"}
        if unknown or "interval_ms" not in d:
            raise ConfigError("bad-policy", f"policy needs interval_ms; unknown keys {sorted(unknown)}")
        d = dict(d)
        d["pad_packet_size"] = d.pop("pad_size", None)
        return cls(**d)


def schedule(events: Sequence[GenEvent], policy: DefensePolicy) -> tuple[np.ndarray, int]:
    """Slot index of every token and the total slot count.

    Token i leaves in the first slot that is at or after its emission and
    after the slot of token i-1.
    """
    if not events:
        return np.empty(0, np.int64), 0
    step = policy.interval_ns
    slots = np.empty(len(events), np.int64)
    prev = -1
    for i, ev in enumerate(events):
        prev = max(-(-ev.t_emit // step), prev + 1)
        slots[i] = prev
    total = int(slots[-1]) + 1
    if not policy.flush_at_end:
        total = max(total, policy.horizon_slots)
    return slots, total


def pace(events: Sequence[GenEvent], policy: DefensePolicy, spec: FrameSpec, stream_id: str = "s0") -> list[PacketRecord]:
    size = policy.packet_size(spec)
    room = size - spec.header_bytes - spec.per_token_overhead_bytes
    for ev in events:
        if spec.payload_len(ev.token) > room:
            raise DataError("token-too-large", f"{ev.token!r} does not fit a {size}-byte paced packet")
    slots, total = schedule(events, policy)
    carried = dict(zip(slots.tolist(), (ev.token for ev in events)))
    step = policy.interval_ns
    return [
        PacketRecord(j * step, size, S2C, stream_id, (carried[j],) if j in carried else (PAD,))
        for j in range(total)
    ]


@dataclass
class OverheadReport:
    n_tokens: int
    n_slots: int
    bandwidth_overhead: float  # pad packets / real packets
    real_data_fraction: float
    latency_ms_mean: float
    latency_ms_p50: float
    latency_ms_p90: float
    latency_ms_max: float
    peak_queue: int

    @property
    def n_pads(self) -> int:
        return self.n_slots - self.n_tokens


def _queue_peak(events: Sequence[GenEvent], slots: np.ndarray, step: int) -> int:
    arrive = np.array([e.t_emit for e in events])
    leave = slots * step
    return int(max(np.sum((arrive <= a) & (leave >= a)) for a in arrive))


def overhead(event_sets: Sequence[Sequence[GenEvent]], policy: DefensePolicy) -> OverheadReport:
    """Pooled accounting over one or more generations."""
    lat: list[np.ndarray] = []
    n_tok = n_slot = peak = 0
    step = policy.interval_ns
    for events in event_sets:
        slots, total = schedule(events, policy)
        n_tok += len(events)
        n_slot += total
        if len(events):
            lat.append(slots * step - np.array([e.t_emit for e in events]))
            peak = max(peak, _queue_peak(events, slots, step))
    if policy.max_queue is not None and peak > policy.max_queue:
        # bounded queue: the generator is held back instead; slot times do not move
        peak = policy.max_queue
    all_lat = np.concatenate(lat) / NS_PER_MS if lat else np.zeros(1)
    pads = n_slot - n_tok
    return OverheadReport(
        n_tok, n_slot,
        pads / n_tok if n_tok else (math.inf if pads else 0.0),
        n_tok / n_slot if n_slot else 1.0,
        float(all_lat.mean()), float(np.percentile(all_lat, 50)), float(np.percentile(all_lat, 90)),
        float(all_lat.max()), peak,
    )


@dataclass
class SweepPoint:
    interval_ms: float
    overhead_pct: float
    latency_ms_mean: float
    latency_ms_p90: float
    real_fraction: float


SWEEP_COLUMNS = ["interval_ms", "overhead_pct", "latency_ms_mean", "latency_ms_p90", "real_fraction"]


def tradeoff_sweep(event_sets: Sequence[Sequence[GenEvent]], intervals_ms: Sequence[float], base: DefensePolicy | None = None) -> list[SweepPoint]:
    """Overhead and added latency of pacing the same generations at each interval."""
    if not intervals_ms:
        raise ConfigError("bad-sweep", "no intervals")
    out = []
    for iv in sorted(intervals_ms):
        pol = DefensePolicy(iv) if base is None else DefensePolicy(**{**base.__dict__, "interval_ms": iv})
        r = overhead(event_sets, pol)
        out.append(SweepPoint(iv, 100 * r.bandwidth_overhead, r.latency_ms_mean, r.latency_ms_p90, r.real_data_fraction))
    return out


def write_sweep_csv(points: Sequence[SweepPoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for p in points:
            w.writerow([f"{getattr(p, c):.6g}" for c in SWEEP_COLUMNS])


def write_sweep_svg(points: Sequence[SweepPoint], path: str | Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([p.overhead_pct for p in points], [p.latency_ms_mean for p in points], "o-")
    for p in points:
        ax.annotate(f"{p.interval_ms:g} ms", (p.overhead_pct, p.latency_ms_mean), fontsize=8)
    ax.set_xlabel("bandwidth overhead (%)")
    ax.set_ylabel("added latency per token (ms)")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


@dataclass
class DefenseEvaluation:
    accuracy: float
    n_trials: int
    chance: float
    ci95: float  # normal-approximation half width

    @property
    def upper(self) -> float:
        return self.accuracy + self.ci95


Predictor = Callable[[Sequence[Trace]], Sequence[Hashable]]


def evaluate_defense(
    fit: Callable[[Mapping[Hashable, Sequence[Trace]]], Predictor],
    train: Mapping[Hashable, Sequence[Trace]],
    test: Mapping[Hashable, Sequence[Trace]],
) -> DefenseEvaluation:
    """Fit an attack on (paced) training traces and measure it on test traces.

    ``fit`` returns a predictor mapping traces to class labels. The adversary
    is adaptive: it sees paced traces at training time too.
    """
    if set(train) != set(test):
        raise DataError("class-mismatch", "train and test must cover the same classes")
    predict = fit(train)
    correct = n = 0
    for label, traces in test.items():
        pred = list(predict(traces))
        correct += sum(p == label for p in pred)
        n += len(pred)
    if n == 0:
        raise DataError("empty-sample", "no test traces")
    acc = correct / n
    return DefenseEvaluation(acc, n, 1.0 / len(test), 1.96 * math.sqrt(max(acc * (1 - acc), 1e-12) / n))
