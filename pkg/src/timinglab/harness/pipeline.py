"""simulate -> frame (or pace) -> transmit -> observe, for one query at a time."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .._rng import derive_seed
from ..defense import DefensePolicy, pace
from ..errors import ConfigError
from ..specsim import GenEvent, SpeculativeConfig, events_from_runs, speculative_generate, tokenize
from ..trace import Trace
from ..wirechan import DEFAULT_NET, FrameSpec, NetModel, PacketRecord, frame, frame_preset, observe, request_packet, transmit
from .workloads import World


@dataclass(frozen=True)
class Channel:
    """Server timing, wire framing and network path for a deployment."""

    gen: SpeculativeConfig = field(default_factory=SpeculativeConfig)
    framing: FrameSpec = field(default_factory=lambda: frame_preset("openai-like"))
    net: NetModel = DEFAULT_NET
    defense: DefensePolicy | None = None

    @classmethod
    def preset(cls, name: str = "openai-like", **kw) -> "Channel":
        return cls(framing=frame_preset(name), **kw)

    def to_dict(self) -> dict:
        return {
            "gen": self.gen.to_dict(),
            "framing": {k: getattr(self.framing, k) for k in
                        ("per_token_overhead_bytes", "header_bytes", "flush_interval_ms", "flush_mode", "flush_count")},
            "net": {"one_way_base_ms": self.net.one_way_base_ms, "jitter_sigma": self.net.jitter_sigma},
            "defense": None if self.defense is None else self.defense.to_dict(),
        }


@lru_cache(maxsize=8192)
def _round_plan(prompt: str, world_key: tuple, n_tokens: int, cfg: SpeculativeConfig) -> tuple[tuple[str, ...], tuple[int, ...]]:
    world = _WORLDS[world_key]
    events = speculative_generate(prompt, world.draft, world.target, replace(cfg, jitter_sigma=0.0), n_tokens)
    runs: list[int] = []
    for ev in events:
        if ev.round == len(runs):
            runs.append(0)
        if ev.kind == "accepted-draft":
            runs[-1] += 1
    return tuple(ev.token for ev in events), tuple(runs)


_WORLDS: dict[tuple, World] = {}


def generate(prompt: str, world: World, cfg: SpeculativeConfig, n_tokens: int) -> list[GenEvent]:
    """``speculative_generate`` with the greedy round plan memoised per prompt.

    Greedy decoding makes the accepted-run pattern a pure function of the
    prompt, so only the round-duration jitter has to be redrawn; the result
    is identical to calling the generator directly.
    """
    if cfg.sampling != "greedy" or cfg.bonus_token:
        return speculative_generate(prompt, world.draft, world.target, cfg, n_tokens)
    key = (world.kinds, world.seed, id(world.draft), id(world.target))
    _WORLDS[key] = world
    tokens, runs = _round_plan(prompt, key, n_tokens, replace(cfg, seed=0))
    return events_from_runs(tokens, runs, cfg, np.random.default_rng(cfg.seed))


def serve(
    prompt: str,
    world: World,
    channel: Channel,
    seed: int,
    *,
    n_tokens: int = 150,
    stream_id: str = "victim",
    start_ns: int = 0,
) -> list[PacketRecord]:
    """All packets of one request/response exchange as they arrive at the tap."""
    cfg = replace(channel.gen, seed=derive_seed("gen", seed, stream_id, prompt))
    events = generate(prompt, world, cfg, n_tokens)
    return packets_for(events, tokenize(prompt), channel, derive_seed("net", seed, stream_id, prompt), stream_id, start_ns)


def packets_for(
    events: Sequence[GenEvent],
    prompt_tokens: Sequence[str],
    channel: Channel,
    net_seed: int,
    stream_id: str,
    start_ns: int = 0,
) -> list[PacketRecord]:
    if channel.defense is not None:
        resp = pace(events, channel.defense, channel.framing, stream_id)
    else:
        resp = frame(events, channel.framing, stream_id)
    req = request_packet(prompt_tokens, channel.framing, stream_id)
    pkts = [req] + resp
    if start_ns:
        pkts = [p._replace(ts_ns=p.ts_ns + start_ns) for p in pkts]
    return transmit(pkts, replace(channel.net, seed=net_seed))


def capture(prompt: str, world: World, channel: Channel, seed: int, **kw) -> Trace:
    return observe(serve(prompt, world, channel, seed, **kw))


def capture_many(prompts: Sequence[str], world: World, channel: Channel, seed: int, reps: int = 1, **kw) -> list[Trace]:
    """``reps`` traces of every prompt, rep-major, each with its own seed."""
    if reps < 1:
        raise ConfigError("bad-reps", str(reps))
    return [capture(p, world, channel, derive_seed(seed, r), **kw) for r in range(reps) for p in prompts]
