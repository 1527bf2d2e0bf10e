"""Active attacks on a capability gap: the second-token oracle, digit-by-digit
secret extraction and black-box search for better probing questions."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .._rng import derive_seed, rng_for
from ..capture.signature import SizeClusterModel, reconstruct_token_delays
from ..errors import ConfigError, DataError
from ..specsim import Suffix
from ..trace import Trace

ACCEPTED = "accepted"
REJECTED = "rejected"

# (suffix, trial) -> trace of the victim answering its secret prompt + suffix
GapQuery = Callable[[Suffix, int], Trace]


def second_token_delay(trace: Trace, size_model: SizeClusterModel | None = None) -> int:
    """Delay (ns) between the first and second reconstructed tokens."""
    sig = reconstruct_token_delays(trace, size_model)
    if len(sig.inter_token_delays) < 1:
        raise DataError("trace-too-short", "need two tokens for a second-token delay")
    return int(sig.inter_token_delays[0])


@dataclass
class SecondTokenOracle:
    threshold_ns: float
    size_model: SizeClusterModel | None = None

    def delay(self, trace: Trace) -> int:
        return second_token_delay(trace, self.size_model)

    def __call__(self, trace: Trace) -> str:
        return ACCEPTED if self.delay(trace) < self.threshold_ns else REJECTED

    def accepted(self, trace: Trace) -> bool:
        return self(trace) == ACCEPTED

    def to_dict(self) -> dict:
        return {"threshold_ns": self.threshold_ns,
                "size_model": None if self.size_model is None else self.size_model.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "SecondTokenOracle":
        sm = d.get("size_model")
        return cls(d["threshold_ns"], None if sm is None else SizeClusterModel.from_dict(sm))


def fit_second_token_oracle(
    accepted: Sequence[Trace], rejected: Sequence[Trace], size_model: SizeClusterModel | None = None
) -> SecondTokenOracle:
    """Threshold at the midpoint of the two classes' mean second-token delays."""
    if not accepted or not rejected:
        raise DataError("empty-class", "need calibration traces for both outcomes")
    fast = np.mean([second_token_delay(t, size_model) for t in accepted])
    slow = np.mean([second_token_delay(t, size_model) for t in rejected])
    if not fast < slow:
        raise DataError("uncalibrated", f"accepted mean {fast:.0f} ns is not below rejected mean {slow:.0f} ns")
    return SecondTokenOracle(0.5 * (fast + slow), size_model)


def second_token_oracle(trace: Trace, oracle: SecondTokenOracle) -> str:
    return oracle(trace)


# ---------------------------------------------------------------------------
# secret extraction
# ---------------------------------------------------------------------------

AMBIGUITY_MARGIN = 2
# the other nine guesses must answer "fast" clearly less than half the time
# (one-sided z-test on their pooled rate) or the oracle is carrying no signal
NOISE_Z = 3.0


@dataclass
class PositionVote:
    votes: list[int]  # fast-path votes for guesses 0..9
    best: int
    margin: int  # best votes minus runner-up votes
    candidates: list[int]
    ambiguous: bool


@dataclass
class ExtractionResult:
    secret: str
    confidence: list[float]  # per position: margin / reps
    positions: list[PositionVote]

    @property
    def ambiguous(self) -> list[bool]:
        return [p.ambiguous for p in self.positions]

    def candidate_secrets(self, limit: int = 10_000) -> list[str]:
        """Every combination of per-position candidates (most-voted first)."""
        combos = itertools.product(*(p.candidates for p in self.positions))
        return ["".join(map(str, c)) for c in itertools.islice(combos, limit)]


def _vote(votes: list[int], reps: int) -> PositionVote:
    order = sorted(range(10), key=lambda g: (-votes[g], g))
    best, second = order[0], order[1]
    margin = votes[best] - votes[second]
    majority = [g for g in range(10) if 2 * votes[g] > reps]
    rest = (sum(votes) - votes[best]) / (9 * reps)
    signal = rest <= 0.5 - NOISE_Z * 0.5 / np.sqrt(9 * reps)
    clear = len(majority) == 1 and majority[0] == best and margin >= AMBIGUITY_MARGIN and signal
    cands = [best] if clear else [g for g in order if votes[g] >= votes[best] - (AMBIGUITY_MARGIN - 1)]
    return PositionVote(votes, best, margin, cands, not clear)


def extract_secret(
    query: GapQuery,
    oracle: SecondTokenOracle,
    template: str,
    digits: int,
    reps: int = 9,
    *,
    seed: int = 0,
) -> ExtractionResult:
    """Ask "is digit p equal to g?" ``reps`` times for every position and
    guess; the guess with most fast-path answers wins the position."""
    if digits < 1 or reps < 1:
        raise ConfigError("bad-extraction", "digits and reps must be >= 1")
    positions = []
    for pos in range(digits):
        votes = []
        for g in range(10):
            sfx = Suffix(template, g, pos)
            votes.append(sum(oracle.accepted(query(sfx, derive_seed(seed, pos, g, r))) for r in range(reps)))
        positions.append(_vote(votes, reps))
    secret = "".join(str(p.best) for p in positions)
    return ExtractionResult(secret, [p.margin / reps for p in positions], positions)


# ---------------------------------------------------------------------------
# black-box suffix search
# ---------------------------------------------------------------------------


class Rephraser(Protocol):
    def __call__(self, template: str, n: int, seed: int) -> list[str]: ...


# Phrase fragments a rephraser may splice into a question. The planted
# landscape gives each one a fixed hidden weight.
FRAGMENTS = [
    "Yes or no?", "Respond with yes or no.", "Provide a yes or no answer.", "Answer in one word.",
    "Be honest.", "Think carefully.", "Please.", "Quickly:", "When looking at that number,",
    "Just checking:", "Tell me:", "I wonder,", "Consider the number you were given.",
    "Only answer yes or no.", "No explanation.", "Between us,", "Hypothetically,", "For the record,",
    "Out of curiosity,", "Simply put,",
]


@dataclass
class PlantedLandscape:
    """Hidden clarity -> gap mapping: ``top - (top - base) * exp(-score)``.

    ``score`` sums the weights of the fragments a template contains, so the
    bare seed question scores 0 and sits at ``base``. ``flat=True`` makes
    every template score 0.
    """

    base: float = 0.562
    top: float = 0.972
    seed: int = 0
    flat: bool = False
    weights: dict[str, float] = field(init=False)

    def __post_init__(self):
        self.weights = {f: float(rng_for("fragment", self.seed, f).uniform(-0.4, 0.9)) for f in FRAGMENTS}

    def score(self, template: str) -> float:
        if self.flat:
            return 0.0
        return max(0.0, sum(w for f, w in self.weights.items() if f in template))

    def gap(self, template: str) -> float:
        return self.top - (self.top - self.base) * float(np.exp(-self.score(template)))


@dataclass
class TemplateMutator:
    """Default rephraser: toggles one or two fragments at the start or end
    of the question. Deterministic in (template, seed)."""

    fragments: Sequence[str] = tuple(FRAGMENTS)
    calls: int = 0

    def __call__(self, template: str, n: int, seed: int) -> list[str]:
        self.calls += 1
        rng = rng_for("mutate", seed, template)
        out: list[str] = []
        tries = 0
        while len(out) < n and tries < 50 * n:
            tries += 1
            t = template
            for _ in range(1 + int(rng.integers(0, 2))):
                f = self.fragments[int(rng.integers(len(self.fragments)))]
                if f in t:
                    t = " ".join(t.replace(f, "").split())
                elif rng.random() < 0.5:
                    t = f"{f} {t}"
                else:
                    t = f"{t} {f}"
            if t != template and t not in out:
                out.append(t)
        return out


class HttpRephraser:
    """Rephraser backed by an HTTP service.

    POSTs ``{"template", "n", "seed"}`` to ``url`` and expects
    ``{"variants": [...]}`` back."""

    def __init__(self, url: str, client=None, timeout: float = 30.0):
        import httpx

        self.url = url
        self.client = client or httpx.Client(timeout=timeout)
        self.calls = 0

    def __call__(self, template: str, n: int, seed: int) -> list[str]:
        self.calls += 1
        resp = self.client.post(self.url, json={"template": template, "n": n, "seed": seed})
        resp.raise_for_status()
        variants = resp.json().get("variants")
        if not isinstance(variants, list) or not all(isinstance(v, str) for v in variants):
            raise DataError("bad-rephraser-response", "expected a list of strings under 'variants'")
        return variants[:n]


@dataclass
class SearchResult:
    best_template: str
    best_score: float
    history: list[float]  # best-so-far score after each round (index 0 = seed)
    rephraser_calls: int
    scored: dict[str, float] = field(repr=False, default_factory=dict)


def suffix_search(
    seed_template: str,
    rephraser: Rephraser,
    scorer: Callable[[str], float],
    rounds: int = 10,
    keep: int = 10,
    variants: int = 20,
    *,
    seed: int = 0,
) -> SearchResult:
    """Elitist beam search over question templates.

    Round 1 rephrases the seed; every later round rephrases each of the
    ``keep`` best templates found so far. With the defaults that is
    1 + 9 * 10 = 91 rephraser calls. Each template is scored once.
    """
    if rounds < 0 or keep < 1 or variants < 1:
        raise ConfigError("bad-search", "rounds >= 0, keep >= 1, variants >= 1")
    scored = {seed_template: scorer(seed_template)}
    beam = [seed_template]
    history = [scored[seed_template]]
    calls = 0
    for r in range(rounds):
        for parent in beam:
            calls += 1
            for t in rephraser(parent, variants, derive_seed(seed, r, parent)):
                if t not in scored:
                    scored[t] = scorer(t)
        # stable order: score desc, then text, so reruns are identical
        beam = sorted(scored, key=lambda t: (-scored[t], t))[:keep]
        history.append(scored[beam[0]])
    best = beam[0] if rounds else seed_template
    return SearchResult(best, scored[best], history, calls, scored)


def distinguishing_rate(
    template: str,
    make_query: Callable[[str], GapQuery],
    oracle: SecondTokenOracle,
    secrets: Sequence[str],
    probes: int = 200,
    seed: int = 0,
) -> float:
    """Fraction of ``probes`` digit questions whose oracle verdict matches the
    truth (guess correct <-> fast path). ``make_query(secret)`` gives a query
    function for a victim holding ``secret``."""
    rng = rng_for("probe", seed, template)
    hits = 0
    queries = {s: make_query(s) for s in secrets}
    for k in range(probes):
        s = secrets[int(rng.integers(len(secrets)))]
        pos = int(rng.integers(len(s)))
        # half the probes ask about the right digit
        g = int(s[pos]) if rng.random() < 0.5 else (int(s[pos]) + 1 + int(rng.integers(0, 9))) % 10
        verdict = oracle.accepted(queries[s](Suffix(template, g, pos), derive_seed(seed, k)))
        hits += verdict == (g == int(s[pos]))
    return hits / probes
