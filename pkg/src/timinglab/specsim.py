"""Virtual-time simulator of a language-model server that uses speculative decoding.

Toy n-gram models stand in for the draft and target networks. Nothing here
sleeps: every emission carries a virtual timestamp (integer nanoseconds)
computed from per-round costs, so runs are exactly reproducible from a seed.
"""
from __future__ import annotations

import json
import math
import re
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Protocol, Sequence

import numpy as np

from ._rng import rng_for
from .errors import ConfigError, DataError

NS_PER_MS = 1_000_000

ACCEPTED = "accepted-draft"
CORRECTION = "correction"
BASELINE = "baseline"


def tokenize(text: str | Sequence[str]) -> list[str]:
    if isinstance(text, str):
        return text.split()
    return list(text)


class LanguageModel(Protocol):
    order: int | None

    def greedy(self, context: Sequence[str]) -> str: ...

    def distribution(self, context: Sequence[str]) -> dict[str, float]: ...


# ---------------------------------------------------------------------------
# n-gram models
# ---------------------------------------------------------------------------


@dataclass
class NgramModel:
    """Count-based n-gram model with longest-known-context backoff.

    ``table`` maps every observed context of length 0..order-1 to successor
    counts, which is what makes backoff down to the unigram row possible.
    Token ids are positions in ``vocab`` (first-appearance order) and are
    only used to break ties.
    """

    order: int
    table: dict[tuple[str, ...], dict[str, int]]
    vocab: list[str]
    _index: dict[str, int] = field(init=False, repr=False)
    _greedy_cache: dict[tuple[str, ...], str] = field(init=False, repr=False)

    def __post_init__(self):
        if self.order < 1:
            raise ConfigError("bad-order", f"order must be >= 1, got {self.order}")
        self._index = {tok: i for i, tok in enumerate(self.vocab)}
        self._greedy_cache = {}

    def _row(self, context: Sequence[str]) -> tuple[tuple[str, ...], dict[str, int]]:
        n = min(self.order - 1, len(context))
        while n > 0:
            ctx = tuple(context[len(context) - n:])
            row = self.table.get(ctx)
            if row is not None:
                return ctx, row
            n -= 1
        return (), self.table[()]

    def greedy(self, context: Sequence[str]) -> str:
        if isinstance(context, str):
            context = context.split()
        ctx, row = self._row(context)
        tok = self._greedy_cache.get(ctx)
        if tok is None:
            index = self._index
            tok = min(row, key=lambda t: (-row[t], index[t]))
            self._greedy_cache[ctx] = tok
        return tok

    def distribution(self, context: Sequence[str]) -> dict[str, float]:
        if isinstance(context, str):
            context = context.split()
        _, row = self._row(context)
        total = sum(row.values())
        return {tok: c / total for tok, c in row.items()}

    def prob(self, token: str, context: Sequence[str]) -> float:
        return self.distribution(context).get(token, 0.0)


def train_ngram(corpus: str | Sequence[str], order: int) -> NgramModel:
    tokens = tokenize(corpus)
    if not tokens:
        raise DataError("empty-corpus")
    if order < 1:
        raise ConfigError("bad-order", f"order must be >= 1, got {order}")
    if len(tokens) <= order:
        raise DataError("corpus-too-short", f"{len(tokens)} tokens for order {order}")
    counts: dict[tuple[str, ...], dict[str, int]] = defaultdict(lambda: defaultdict(int))
    vocab: dict[str, None] = {}
    for i, tok in enumerate(tokens):
        vocab.setdefault(tok, None)
        for m in range(min(order - 1, i) + 1):
            counts[tuple(tokens[i - m:i])][tok] += 1
    table = {ctx: dict(row) for ctx, row in counts.items()}
    return NgramModel(order=order, table=table, vocab=list(vocab))


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpeculativeConfig:
    k: int = 5
    draft_step_cost_ms: float = 2.0
    verify_cost_ms: float = 14.0
    baseline_cost_ms: float = 14.0
    jitter_sigma: float = 0.02
    seed: int = 0
    bonus_token: bool = False
    # "greedy": accept iff target argmax equals the draft token.
    # "sample": standard speculative sampling (accept w.p. min(1, p_t/p_d)).
    sampling: str = "greedy"

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("bad-config", "k must be >= 1")
        if min(self.draft_step_cost_ms, self.verify_cost_ms, self.baseline_cost_ms) <= 0:
            raise ConfigError("bad-config", "all costs must be > 0")
        if self.jitter_sigma < 0:
            raise ConfigError("bad-config", "jitter_sigma must be >= 0")
        if self.sampling not in ("greedy", "sample"):
            raise ConfigError("bad-config", f"unknown sampling mode {self.sampling!r}")

    @property
    def round_ns(self) -> int:
        return round((self.k * self.draft_step_cost_ms + self.verify_cost_ms) * NS_PER_MS)

    @property
    def baseline_ns(self) -> int:
        return round(self.baseline_cost_ms * NS_PER_MS)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SpeculativeConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError("bad-config", f"unknown config keys {sorted(unknown)}")
        return cls(**d)


class GenEvent(NamedTuple):
    token: str
    t_emit: int  # ns, virtual
    round: int
    kind: str


def _duration(base_ns: int, sigma: float, rng: np.random.Generator) -> int:
    if sigma == 0:
        return base_ns
    return max(1, round(base_ns * math.exp(sigma * rng.standard_normal())))


def _check_request(prompt, n_tokens):
    if n_tokens <= 0:
        raise DataError("zero-tokens")
    if not prompt:
        raise DataError("empty-prompt")


def _sample(dist: dict[str, float], rng: np.random.Generator) -> str:
    toks = sorted(dist)
    p = np.fromiter((dist[t] for t in toks), float, len(toks))
    return toks[int(rng.choice(len(toks), p=p / p.sum()))]


def speculative_generate(
    prompt: str | Sequence[str],
    draft: LanguageModel,
    target: LanguageModel,
    cfg: SpeculativeConfig,
    n_tokens: int = 150,
) -> list[GenEvent]:
    """Generate ``n_tokens`` tokens with draft-then-verify rounds.

    Every round costs ``k * draft_step + verify`` (lognormal jitter applied
    multiplicatively) and all tokens released by a round share the round's
    end timestamp.
    """
    ctx = tokenize(prompt)
    _check_request(ctx, n_tokens)
    d_order, t_order = getattr(draft, "order", None), getattr(target, "order", None)
    if d_order is not None and t_order is not None and d_order > t_order:
        raise ConfigError("draft-order", f"draft order {d_order} > target order {t_order}")
    rng = np.random.default_rng(cfg.seed)
    # n-gram models only ever read their last order-1 tokens
    window = max(d_order, t_order) - 1 if (d_order and t_order) else None
    out: list[GenEvent] = []
    t = 0
    rnd = 0
    while len(out) < n_tokens:
        tail = ctx if window is None else (ctx[-window:] if window else [])
        emitted = _round_greedy(tail, draft, target, cfg) if cfg.sampling == "greedy" \
            else _round_sampled(tail, draft, target, cfg, rng)
        t += _duration(cfg.round_ns, cfg.jitter_sigma, rng)
        for tok, kind in emitted[: n_tokens - len(out)]:
            out.append(GenEvent(tok, t, rnd, kind))
            ctx.append(tok)
        rnd += 1
    return out


def _round_greedy(tail, draft, target, cfg) -> list[tuple[str, str]]:
    work = list(tail)
    proposals = []
    for _ in range(cfg.k):
        tok = draft.greedy(work)
        proposals.append(tok)
        work.append(tok)
    work = list(tail)
    emitted = []
    for tok in proposals:
        want = target.greedy(work)
        if want != tok:
            emitted.append((want, CORRECTION))
            return emitted
        emitted.append((tok, ACCEPTED))
        work.append(tok)
    if cfg.bonus_token:
        emitted.append((target.greedy(work), CORRECTION))
    return emitted


def _round_sampled(tail, draft, target, cfg, rng) -> list[tuple[str, str]]:
    work = list(tail)
    proposals = []
    for _ in range(cfg.k):
        dist = draft.distribution(work)
        tok = _sample(dist, rng)
        proposals.append((tok, dist))
        work.append(tok)
    work = list(tail)
    emitted = []
    for tok, d_dist in proposals:
        t_dist = target.distribution(work)
        pt, pd = t_dist.get(tok, 0.0), d_dist[tok]
        if rng.random() < min(1.0, pt / pd):
            emitted.append((tok, ACCEPTED))
            work.append(tok)
            continue
        residual = {x: max(0.0, p - d_dist.get(x, 0.0)) for x, p in t_dist.items()}
        if sum(residual.values()) <= 0:
            residual = t_dist
        emitted.append((_sample(residual, rng), CORRECTION))
        return emitted
    if cfg.bonus_token:
        emitted.append((_sample(target.distribution(work), rng), CORRECTION))
    return emitted


def baseline_generate(
    prompt: str | Sequence[str],
    target: LanguageModel,
    cfg: SpeculativeConfig,
    n_tokens: int = 150,
) -> list[GenEvent]:
    """Plain autoregressive decoding: one target call per token."""
    ctx = tokenize(prompt)
    _check_request(ctx, n_tokens)
    rng = np.random.default_rng(cfg.seed)
    out = []
    t = 0
    for i in range(n_tokens):
        tok = target.greedy(ctx) if cfg.sampling == "greedy" else _sample(target.distribution(ctx), rng)
        t += _duration(cfg.baseline_ns, cfg.jitter_sigma, rng)
        out.append(GenEvent(tok, t, i, BASELINE))
        ctx.append(tok)
    return out


def span_ns(events: Sequence[GenEvent]) -> int:
    return events[-1].t_emit if events else 0


def events_from_runs(
    tokens: Sequence[str],
    accepted_runs: Iterable[int],
    cfg: SpeculativeConfig,
    rng: np.random.Generator | None = None,
) -> list[GenEvent]:
    """Lay out pre-planned rounds in virtual time.

    ``accepted_runs[r]`` is the accepted-prefix length of round r; a run
    shorter than ``k`` is followed by one correction token. This is the
    "round shape" route used by planted responders that skip model lookups.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    out: list[GenEvent] = []
    t = 0
    n = len(tokens)
    for rnd, a in enumerate(accepted_runs):
        if len(out) >= n:
            break
        if not 0 <= a <= cfg.k:
            raise ConfigError("bad-run", f"accepted run {a} outside [0, {cfg.k}]")
        t += _duration(cfg.round_ns, cfg.jitter_sigma, rng)
        kinds = [ACCEPTED] * a + ([CORRECTION] if a < cfg.k else [])
        for kind in kinds[: n - len(out)]:
            out.append(GenEvent(tokens[len(out)], t, rnd, kind))
    if len(out) < n:
        raise ConfigError("bad-run", "runs exhausted before all tokens were emitted")
    return out


def sample_accept_runs(rng: np.random.Generator, alpha: float, k: int, n_tokens: int) -> list[int]:
    """Accepted-prefix lengths for rounds where each draft token is accepted
    independently with probability ``alpha``; enough rounds for ``n_tokens``."""
    runs, total = [], 0
    while total < n_tokens:
        a = 0
        while a < k and rng.random() < alpha:
            a += 1
        runs.append(a)
        total += a + (a < k)
    return runs


# Round-shape presets for the other data-dependent methods. They are not
# faithful algorithms, only (k, costs, per-token acceptance) profiles.
TIMING_PRESETS: dict[str, dict] = {
    "speculative": dict(k=5, draft_step_cost_ms=2.0, verify_cost_ms=14.0),
    "specinfer": dict(k=8, draft_step_cost_ms=1.5, verify_cost_ms=16.0),
    "medusa": dict(k=4, draft_step_cost_ms=0.5, verify_cost_ms=15.0),
    "lookahead": dict(k=6, draft_step_cost_ms=1.0, verify_cost_ms=18.0),
    "consistency": dict(k=8, draft_step_cost_ms=0.8, verify_cost_ms=17.0),
}


def preset_config(method: str, **overrides) -> SpeculativeConfig:
    try:
        params = dict(TIMING_PRESETS[method])
    except KeyError:
        raise ConfigError("unknown-preset", method) from None
    params.update(overrides)
    return SpeculativeConfig(**params)


# ---------------------------------------------------------------------------
# Second-token capability-gap responder
# ---------------------------------------------------------------------------

PROBE_TEMPLATES: list[tuple[str, float]] = [
    ("Is the first digit in the number X?", 0.562),
    ("Is the first numeral in the number a X?", 0.656),
    ("Yes or no, does the digit X occupy the first place in the number?", 0.782),
    ("Does the number you have begin with X? Respond with yes or no.", 0.855),
    ("Does a X appear as the first character in the number? Yes or no?", 0.878),
    ("Is the initial digit of the number a X? Yes or no?", 0.902),
    ("Do we see a X at the beginning of the number? Provide a yes or no answer.", 0.941),
    ("When looking at that number, is X the initial digit? Yes or no?", 0.972),
]

_ORDINALS = ["first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth"]


@dataclass(frozen=True)
class Suffix:
    template: str
    guess: int
    position: int = 0

    def render(self) -> str:
        text = re.sub(r"\bX\b", str(self.guess), self.template)
        if self.position:
            text = text.replace("first", _ORDINALS[self.position]).replace("initial", _ORDINALS[self.position])
        return text


@dataclass
class ScriptedGapResponder:
    """Planted capability gap for digit-probing questions.

    With probability ``gap_probs[template]`` the first-token outcome reveals
    the truth (accepted when the guessed digit matches, rejected when it does
    not); otherwise it shows the opposite. 0.5 therefore carries no signal.
    """

    secret: str
    gap_probs: dict[str, float] = field(default_factory=lambda: dict(PROBE_TEMPLATES))
    seed: int = 0

    def __post_init__(self):
        if not self.secret.isdigit():
            raise ConfigError("bad-secret", "secret must be a digit string")
        for p in self.gap_probs.values():
            if not 0.0 <= p <= 1.0:
                raise ConfigError("bad-probability", str(p))

    def register(self, template: str, prob: float) -> None:
        if not 0.0 <= prob <= 1.0:
            raise ConfigError("bad-probability", str(prob))
        self.gap_probs[template] = prob

    def first_token_accepted(self, suffix: Suffix, trial_seed: int = 0) -> bool:
        if suffix.template not in self.gap_probs:
            raise ConfigError("unknown-template", suffix.template)
        if not 0 <= suffix.position < len(self.secret):
            raise ConfigError("bad-position", str(suffix.position))
        match = self.secret[suffix.position] == str(suffix.guess)
        rng = rng_for("gap", self.seed, trial_seed, self.secret, suffix.template, suffix.guess, suffix.position)
        reveals = rng.random() < self.gap_probs[suffix.template]
        return match if reveals else not match


_FILLER = ["Yes", "No", ",", "the", "number", "is", "not", "that", "I", "can", "say", "."]


def answer_with_gap(
    secret_prompt: str,
    suffix: Suffix,
    responder: ScriptedGapResponder,
    cfg: SpeculativeConfig,
    n_tokens: int = 8,
) -> list[GenEvent]:
    """Respond to ``secret_prompt + suffix`` with a planted first-round outcome.

    Accepted first token: the whole first round (k tokens) is released at once,
    so the second token arrives together with the first. Rejected: only the
    correction is released and the second token waits a full round.
    """
    if n_tokens < 2:
        raise DataError("zero-tokens", "need at least two tokens to expose the second-token delay")
    accepted = responder.first_token_accepted(suffix, cfg.seed)
    rng = rng_for("answer", cfg.seed, secret_prompt, suffix.render())
    first = cfg.k if accepted else 0
    rest = sample_accept_runs(rng, 0.5, cfg.k, max(0, n_tokens - (first + (first < cfg.k))))
    tokens = [_FILLER[i] for i in rng.integers(0, len(_FILLER), n_tokens)]
    return events_from_runs(tokens, [first] + rest, cfg, rng)


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

PREDICATES: dict[str, Callable[..., object]] = {
    "equals": lambda prompt, value: prompt == value,
    "in_set": lambda prompt, members: prompt in set(members),
    "contains": lambda prompt, substring: substring in prompt,
    "label_map": lambda prompt, labels: labels[prompt],
}


@dataclass
class Scenario:
    id: str
    prompts: list[str]
    predicate: dict
    max_tokens: int = 150
    turns: int = 1
    world: dict | None = None  # workload recipe the server models are trained on

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ConfigError("bad-scenario", "max_tokens must be >= 1")
        if self.turns < 1:
            raise ConfigError("bad-scenario", "turns must be >= 1")
        if self.predicate.get("name") not in PREDICATES:
            raise ConfigError("bad-scenario", f"unknown predicate {self.predicate.get('name')!r}")
        labels = self.labels()
        if len(set(labels)) < 2:
            raise ConfigError("bad-scenario", "predicate must split prompts into >= 2 classes")

    def label(self, prompt: str):
        fn = PREDICATES[self.predicate["name"]]
        try:
            return fn(prompt, **self.predicate.get("params", {}))
        except (KeyError, TypeError) as exc:
            raise ConfigError("bad-scenario", f"predicate failed on {prompt!r}: {exc}") from None

    def labels(self) -> list:
        return [self.label(p) for p in self.prompts]

    def classes(self) -> dict[object, list[str]]:
        out: dict[object, list[str]] = {}
        for p in self.prompts:
            out.setdefault(self.label(p), []).append(p)
        return dict(sorted(out.items(), key=lambda kv: str(kv[0])))

    def to_json(self) -> str:
        d = asdict(self)
        if d["world"] is None:
            del d["world"]
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        missing = {"id", "prompts", "predicate"} - set(d)
        if missing:
            raise ConfigError("bad-scenario", f"missing keys {sorted(missing)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        path = Path(path)
        if not path.exists():
            raise ConfigError("scenario-not-found", str(path))
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError("bad-scenario", str(exc)) from None
