"""Planted victims for the active attacks.

Each victim renders its answers through the same frame -> transmit ->
observe path as the n-gram server, so attacks only ever see Traces.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .._rng import derive_seed, rng_for
from ..specsim import SpeculativeConfig, Suffix, ScriptedGapResponder, answer_with_gap, events_from_runs, sample_accept_runs
from ..trace import Trace
from ..wirechan import observe
from .pipeline import Channel, packets_for
from .workloads import SECRET_TEMPLATE

_WORDS = ["the", "answer", "is", "not", "something", "I", "can", "share", ",", "sorry", ".", "that", "number"]


@dataclass
class PlantedBoostVictim:
    """N secret prompts whose response to suffix j follows one of ``buckets``
    round patterns, chosen by a hash of (secret, suffix).

    Two secrets look alike under one suffix with probability 1/buckets, and
    alike under all of them with probability buckets**-n_suffixes.
    """

    n_secrets: int
    n_suffixes: int
    seed: int = 0
    buckets: int = 16
    n_tokens: int = 20
    alpha: float = 0.5
    channel: Channel = field(default_factory=Channel)

    def bucket(self, i: int, j: int) -> int:
        return derive_seed("bucket", self.seed, i, j) % self.buckets

    def _plan(self, j: int, b: int) -> tuple[list[str], list[int]]:
        rng = rng_for("boost-plan", self.seed, j, b)
        runs = sample_accept_runs(rng, self.alpha, self.channel.gen.k, self.n_tokens)
        tokens = [_WORDS[t] for t in rng.integers(0, len(_WORDS), self.n_tokens)]
        return tokens, runs

    def trace(self, i: int, j: int, trial: int = 0) -> Trace:
        tokens, runs = self._plan(j, self.bucket(i, j))
        cfg = replace(self.channel.gen, seed=derive_seed("boost-gen", self.seed, i, j, trial))
        events = events_from_runs(tokens, runs, cfg)
        prompt = SECRET_TEMPLATE.format(i).split() + [f"q{j}"]
        net_seed = derive_seed("boost-net", self.seed, i, j, trial)
        return observe(packets_for(events, prompt, self.channel, net_seed, "victim"))


@dataclass
class GapVictim:
    """Chat endpoint holding a secret, probed with digit questions."""

    responder: ScriptedGapResponder
    channel: Channel = field(default_factory=Channel)
    n_tokens: int = 8
    seed: int = 0

    @property
    def prompt(self) -> str:
        return SECRET_TEMPLATE.format(self.responder.secret)

    def trace(self, suffix: Suffix, trial: int = 0) -> Trace:
        s = derive_seed("gap-query", self.seed, trial, suffix.template, suffix.guess, suffix.position)
        cfg = replace(self.channel.gen, seed=s)
        events = answer_with_gap(self.prompt, suffix, self.responder, cfg, self.n_tokens)
        toks = self.prompt.split() + suffix.render().split()
        return observe(packets_for(events, toks, self.channel, derive_seed("gap-net", s), "victim"))

    def truth(self, suffix: Suffix, trial: int = 0) -> bool:
        """Planted first-round outcome of the query (ground truth for the oracle)."""
        s = derive_seed("gap-query", self.seed, trial, suffix.template, suffix.guess, suffix.position)
        return self.responder.first_token_accepted(suffix, s)


def calibration_traces(template: str, channel: Channel, n: int = 40, seed: int = 0) -> tuple[list[Trace], list[Trace]]:
    """Accepted / rejected second-token traces from a victim the attacker controls.

    The attacker plants its own secret and a template with a perfect gap, so
    a correct guess always takes the fast path and a wrong one never does.
    """
    rng = rng_for("calibrate", seed)
    acc, rej = [], []
    for t in range(n):
        secret = str(int(rng.integers(0, 10)))
        victim = GapVictim(ScriptedGapResponder(secret, {template: 1.0}, seed), channel, seed=derive_seed(seed, t))
        wrong = (int(secret) + 1 + int(rng.integers(0, 9))) % 10
        acc.append(victim.trace(Suffix(template, int(secret)), t))
        rej.append(victim.trace(Suffix(template, wrong), t))
    return acc, rej
