"""White-box attacker: score how hard an input is for the draft model, and
search for a suffix that makes that hardness differ between secrets.

With a draft/target pair in hand, expected response time is roughly
``t1 + (t2 - t1) * rejection(x)`` where t1 is the fast path and t2 the
slow one. Under speculative sampling the first draft token is rejected with
probability equal to the total-variation distance between the two
next-token distributions; for a two-token vocabulary that is
``|P_target(y|x) - P_draft(y|x)|``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .._rng import rng_for
from ..errors import ConfigError
from ..specsim import LanguageModel, tokenize


@dataclass
class DifficultyScorer:
    draft: LanguageModel
    target: LanguageModel
    y: str  # the token whose probability gap is measured
    t_fast_ms: float = 4.8
    t_slow_ms: float = 24.0

    def __call__(self, x: str | Sequence[str]) -> float:
        return difficulty(x, self)

    def expected_time_ms(self, x: str | Sequence[str]) -> float:
        return self.t_fast_ms + (self.t_slow_ms - self.t_fast_ms) * rejection_probability(x, self)


def difficulty(x: str | Sequence[str], scorer: DifficultyScorer) -> float:
    """``P_target(y | x) - P_draft(y | x)``, in [-1, 1]."""
    ctx = tokenize(x)
    pt = scorer.target.distribution(ctx).get(scorer.y, 0.0)
    pd = scorer.draft.distribution(ctx).get(scorer.y, 0.0)
    return float(pt - pd)


def rejection_probability(x: str | Sequence[str], scorer: DifficultyScorer) -> float:
    """Total-variation distance between the two next-token distributions."""
    ctx = tokenize(x)
    pt = scorer.target.distribution(ctx)
    pd = scorer.draft.distribution(ctx)
    return 0.5 * sum(abs(pt.get(t, 0.0) - pd.get(t, 0.0)) for t in set(pt) | set(pd))


@dataclass
class LogLinearLM:
    """Two-outcome model whose logit is a sum of per-token weights over the
    whole context (bag of words). Unlike an n-gram it still "sees" a prompt
    that sits behind a long suffix."""

    weights: dict[str, float]
    bias: float = 0.0
    outcomes: tuple[str, str] = ("yes", "no")
    order: int | None = None

    def logit(self, context: Sequence[str]) -> float:
        return self.bias + sum(self.weights.get(t, 0.0) for t in context)

    def distribution(self, context: Sequence[str]) -> dict[str, float]:
        p = 1.0 / (1.0 + math.exp(-self.logit(tokenize(context))))
        return {self.outcomes[0]: p, self.outcomes[1]: 1.0 - p}

    def greedy(self, context: Sequence[str]) -> str:
        d = self.distribution(context)
        return self.outcomes[0] if d[self.outcomes[0]] >= 0.5 else self.outcomes[1]


def planted_loglinear_pair(
    vocab_size: int = 64, seed: int = 0, scale: float = 1.5, n_secrets: int = 2, secret_weight: float = 4.0,
) -> tuple[LogLinearLM, LogLinearLM, list[str]]:
    """Random target/draft weights over ``w0..w{V-1}`` plus secret tokens
    ``s0..`` that only the target reacts to (weights spread over
    +-secret_weight; the draft gives them 0). Suffix search may only use the
    ``w`` tokens, which are returned."""
    rng = rng_for("loglinear", seed)
    vocab = [f"w{i}" for i in range(vocab_size)]
    wt = dict(zip(vocab, rng.normal(0, scale, vocab_size)))
    wd = dict(zip(vocab, rng.normal(0, scale, vocab_size)))
    for i, w in enumerate(np.linspace(secret_weight, -secret_weight, n_secrets) if n_secrets > 1 else [secret_weight]):
        wt[f"s{i}"] = float(w)
        wd[f"s{i}"] = 0.0
    return LogLinearLM(wt), LogLinearLM(wd), vocab


def pair_objective(prompts: Sequence[Sequence[str]], scorer: DifficultyScorer) -> Callable[[Sequence[str]], float]:
    """Spread of expected response time across prompts for a suffix, as the
    range of first-token rejection probabilities."""
    def obj(suffix: Sequence[str]) -> float:
        r = [rejection_probability(list(p) + list(suffix), scorer) for p in prompts]
        return max(r) - min(r)
    return obj


def distinguishing_rate_pair(prompts: Sequence[Sequence[str]], suffix: Sequence[str], scorer: DifficultyScorer) -> float:
    """Best single-query accuracy telling two prompts apart from the fast/slow
    outcome: 0.5 + 0.5 * |P_rej(A) - P_rej(B)|."""
    if len(prompts) != 2:
        raise ConfigError("bad-objective", "pairwise rate needs exactly two prompts")
    return 0.5 + 0.5 * pair_objective(prompts, scorer)(suffix)


def identification_rate(prompts: Sequence[Sequence[str]], suffix: Sequence[str], scorer: DifficultyScorer) -> float:
    """Accuracy of naming which of the prompts was sent from one fast/slow
    outcome, decoding by maximum likelihood under a uniform prior. Equals the
    pairwise rate for two prompts and is at most 2 / len(prompts)."""
    r = [rejection_probability(list(p) + list(suffix), scorer) for p in prompts]
    return (max(r) + max(1 - x for x in r)) / len(prompts)


@dataclass
class CoordinateSearchResult:
    suffix: list[str]
    objective: float
    history: list[float] = field(default_factory=list)  # objective after each iteration
    iterations: int = 0


def greedy_coordinate_search(
    objective: Callable[[Sequence[str]], float],
    vocab: Sequence[str],
    init: Sequence[str],
    budget: int = 100,
    *,
    candidates: int | None = None,
    seed: int = 0,
) -> CoordinateSearchResult:
    """Hill-climb one suffix position per iteration (cycling through
    positions), trying every vocabulary token (or a seeded sample of
    ``candidates``) there and keeping the best. Stops early once a full
    sweep over all positions brings no improvement."""
    if budget < 0:
        raise ConfigError("bad-budget", str(budget))
    suffix = list(init)
    best = objective(suffix)
    history = [best]
    if not suffix or budget == 0:
        return CoordinateSearchResult(suffix, best, history, 0)
    rng = rng_for("gcs", seed)
    stale = 0
    it = 0
    for it in range(1, budget + 1):
        pos = (it - 1) % len(suffix)
        pool = vocab if candidates is None else [vocab[i] for i in rng.choice(len(vocab), min(candidates, len(vocab)), replace=False)]
        improved = False
        for tok in pool:
            if tok == suffix[pos]:
                continue
            trial = suffix[:pos] + [tok] + suffix[pos + 1:]
            val = objective(trial)
            if val > best + 1e-12:
                best, suffix, improved = val, trial, True
        history.append(best)
        stale = 0 if improved else stale + 1
        if stale >= len(suffix):
            break
    return CoordinateSearchResult(suffix, best, history, it)
