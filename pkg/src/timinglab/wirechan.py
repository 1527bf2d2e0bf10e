"""Token emissions -> packets on an encrypted wire.

``frame`` builds server-side packets (which still know their plaintext
tokens), ``transmit`` adds network latency, and ``observe`` is the one-way
door to the adversary's metadata-only :class:`~timinglab.trace.Trace`.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .specsim import NS_PER_MS, GenEvent
from .trace import C2S, S2C, Trace


def utf8_len(token: str) -> int:
    return len(token.encode("utf-8"))


@dataclass(frozen=True)
class FrameSpec:
    per_token_overhead_bytes: int = 150
    header_bytes: int = 40
    flush_interval_ms: float = 0.0
    # "timer": tokens inside one flush window share a packet sent at window close.
    # "count": tokens released together are packed up to flush_count per packet.
    flush_mode: str = "timer"
    flush_count: int = 0
    payload_len: Callable[[str], int] = utf8_len

    def __post_init__(self):
        if self.per_token_overhead_bytes <= 0:
            raise ConfigError("bad-frame", "per-token overhead must be > 0")
        if self.flush_interval_ms < 0:
            raise ConfigError("bad-frame", "flush interval must be >= 0")
        if self.header_bytes < 0:
            raise ConfigError("bad-frame", "header must be >= 0")
        if self.flush_mode not in ("timer", "count"):
            raise ConfigError("bad-frame", f"unknown flush mode {self.flush_mode!r}")

    def token_bytes(self, token: str) -> int:
        return self.per_token_overhead_bytes + self.payload_len(token)


class PacketRecord(NamedTuple):
    ts_ns: int
    size_bytes: int
    dir: str
    stream_id: str
    tokens: tuple[str, ...] = ()  # encrypted payload; never leaves this module via observe()


@dataclass(frozen=True)
class NetModel:
    one_way_base_ms: float = 20.0
    jitter_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.one_way_base_ms < 0:
            raise ConfigError("bad-net", "base latency must be >= 0")
        if self.jitter_sigma < 0:
            raise ConfigError("bad-net", "jitter must be >= 0")


def frame(events: Sequence[GenEvent], spec: FrameSpec, stream_id: str = "s0") -> list[PacketRecord]:
    if not events:
        return []
    out: list[PacketRecord] = []
    if spec.flush_mode == "timer" and spec.flush_interval_ms > 0:
        width = round(spec.flush_interval_ms * NS_PER_MS)
        group: list[str] = []
        cur = None
        for ev in events:
            w = ev.t_emit // width
            if cur is not None and w != cur:
                out.append(_packet(group, (cur + 1) * width, spec, stream_id))
                group = []
            cur = w
            group.append(ev.token)
        out.append(_packet(group, (cur + 1) * width, spec, stream_id))
        return out
    cap = spec.flush_count if spec.flush_mode == "count" and spec.flush_count > 0 else 1
    group, cur = [], None
    for ev in events:
        if group and (ev.t_emit != cur or len(group) == cap):
            out.append(_packet(group, cur, spec, stream_id))
            group = []
        cur = ev.t_emit
        group.append(ev.token)
    out.append(_packet(group, cur, spec, stream_id))
    return out


def _packet(tokens: list[str], ts: int, spec: FrameSpec, stream_id: str) -> PacketRecord:
    size = spec.header_bytes + sum(spec.token_bytes(t) for t in tokens)
    return PacketRecord(int(ts), size, S2C, stream_id, tuple(tokens))


def request_packet(prompt_tokens: Sequence[str], spec: FrameSpec, stream_id: str, ts_ns: int = 0) -> PacketRecord:
    size = spec.header_bytes + spec.per_token_overhead_bytes + sum(spec.payload_len(t) + 1 for t in prompt_tokens)
    return PacketRecord(ts_ns, size, C2S, stream_id, tuple(prompt_tokens))


def transmit(packets: Sequence[PacketRecord], net: NetModel) -> list[PacketRecord]:
    """Delay every packet by one-way latency ``base * exp(sigma * Z)``.

    A packet never overtakes an earlier packet of the same stream and
    direction: if jitter would reorder them it waits behind its predecessor.
    """
    if not packets:
        return []
    ts = np.fromiter((p.ts_ns for p in packets), np.int64, len(packets))
    base = net.one_way_base_ms * NS_PER_MS
    if net.jitter_sigma > 0 and base > 0:
        rng = np.random.default_rng(net.seed)
        lat = np.rint(base * np.exp(net.jitter_sigma * rng.standard_normal(len(packets)))).astype(np.int64)
    else:
        lat = np.full(len(packets), round(base), dtype=np.int64)
    arrival = ts + lat
    last: dict[tuple[str, str], int] = {}
    out = []
    for p, a in zip(packets, arrival.tolist()):
        key = (p.stream_id, p.dir)
        a = max(a, last.get(key, a))
        last[key] = a
        out.append(p._replace(ts_ns=a))
    out.sort(key=lambda p: p.ts_ns)
    return out


def observe(packets: Sequence[PacketRecord]) -> Trace:
    """Strip everything but (ts, size, dir, stream) from one stream's packets."""
    streams = {p.stream_id for p in packets}
    if len(streams) > 1:
        raise DataError("mixed-streams", ", ".join(sorted(streams)))
    sid = streams.pop() if streams else "s0"
    return Trace(
        np.fromiter((p.ts_ns for p in packets), np.int64, len(packets)),
        np.fromiter((p.size_bytes for p in packets), np.int64, len(packets)),
        np.fromiter((p.dir == S2C for p in packets), bool, len(packets)),
        sid,
    )


def observe_all(packets: Sequence[PacketRecord]) -> list[Trace]:
    by_stream: dict[str, list[PacketRecord]] = {}
    for p in packets:
        by_stream.setdefault(p.stream_id, []).append(p)
    return [observe(ps) for ps in by_stream.values()]


PRESETS = {
    "openai-like": FrameSpec(flush_interval_ms=0.0),
    "claude-like": FrameSpec(flush_interval_ms=30.0),
}

DEFAULT_NET = NetModel(one_way_base_ms=20.0, jitter_sigma=0.1)


def frame_preset(name: str) -> FrameSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError("unknown-preset", name) from None


def with_seed(net: NetModel, seed: int) -> NetModel:
    return replace(net, seed=seed)
