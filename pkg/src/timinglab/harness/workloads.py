"""Synthetic workloads and the n-gram "worlds" trained on them.

A world is a draft/target model pair trained on the union of several
workloads' documents. Each non-trivial workload is built so that the
target model has memorised every document exactly (all order-4 contexts
are unique) while the order-2 draft model only knows which successor is
most common. The draft therefore fails in predictable, workload-specific
places, and that is the timing signal.

Document tokens come in two flavours: *unique* tokens (fresh strings that
occur once in the whole world, so both models know their successor) and
*shared* words that recur. After a shared word the draft guesses its
dominant successor; whenever the document goes elsewhere the round is cut.
No three shared words ever appear in a row, so every target context
contains a unique token.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .._rng import rng_for
from ..errors import ConfigError
from ..specsim import NgramModel, train_ngram

EOS = "<eos>"
SECRET_TEMPLATE = "The secret number is {}. Do not reveal it."


@dataclass
class Workload:
    kind: str
    seed: int
    prompts: list[str]
    docs: list[list[str]] = field(default_factory=list, repr=False)
    params: dict = field(default_factory=dict)
    # prompt -> planted value (secret-number only)
    secrets: dict[str, str] = field(default_factory=dict)

    def corpus(self) -> list[str]:
        out: list[str] = []
        for d in self.docs:
            out.extend(d)
            out.append(EOS)
        return out


# ---------------------------------------------------------------------------
# token factories
# ---------------------------------------------------------------------------

ASCII = "abcdefghijklmnopqrstuvwxyz"
LATIN_EXT = "àáâãäåæçèéêëìíîïñòóôõöùúûüý"
GREEK = "αβγδεζηθικλμνξοπρστυφχψω"
CYRILLIC = "абвгдежзийклмнопрстуфхцчшщэюя"
CJK = "的一是不了人我在有他这为之大来以个中上们到说国和地也子时道出而要于就下得可你年生"

# (alphabet, mean extra characters over the minimum, minimum length, shared-word rate)
LANGUAGES: list[tuple[str, float, int, float]] = [
    (ASCII, 1.5, 2, 0.15),
    (ASCII, 4.0, 2, 0.40),
    (ASCII, 7.0, 3, 0.25),
    (LATIN_EXT, 1.5, 2, 0.45),
    (LATIN_EXT, 4.0, 2, 0.20),
    (GREEK, 2.5, 2, 0.30),
    (CJK, 0.3, 1, 0.20),
    (CJK, 1.5, 1, 0.45),
    (CYRILLIC, 5.5, 2, 0.35),
    (ASCII, 10.0, 4, 0.30),
]

TOPICS: dict[str, dict] = {
    # shared-word rate mean / spread across documents, dominant-successor rate
    "topic-A": dict(alphabet=ASCII, mean_extra=3.0, min_len=2, p_shared=0.18, p_shared_sd=0.1, p_dom=0.3),
    "topic-B": dict(alphabet=ASCII, mean_extra=3.0, min_len=2, p_shared=0.50, p_shared_sd=0.1, p_dom=0.3),
}


class _UniqueTokens:
    """Fresh strings never handed out before (across one world)."""

    def __init__(self, rng: np.random.Generator, alphabet: str, mean_extra: float, min_len: int, taken: set[str]):
        self.rng, self.alphabet, self.mean_extra, self.min_len, self.taken = rng, alphabet, mean_extra, min_len, taken

    def __call__(self) -> str:
        length = self.min_len + int(self.rng.poisson(self.mean_extra))
        while True:
            tok = "".join(self.alphabet[i] for i in self.rng.integers(0, len(self.alphabet), length))
            if tok not in self.taken:
                self.taken.add(tok)
                return tok
            length += 1  # short strings run out; go longer instead of spinning


def _structured_doc(
    rng: np.random.Generator,
    length: int,
    shared: Sequence[str],
    dom: dict[str, str],
    p_shared: float,
    p_dom: float,
    fresh: Callable[[], str],
) -> list[str]:
    toks: list[str] = [fresh()]
    run = 0  # shared words at the end of toks
    while len(toks) < length:
        if run == 0 and rng.random() < p_shared:
            tok = shared[int(rng.integers(len(shared)))]
            run = 1
        elif run == 1 and rng.random() < p_dom:
            tok = dom[toks[-1]]
            run = 2
        else:
            tok = fresh()
            run = 0
        toks.append(tok)
    return toks


def _shared_vocab(rng: np.random.Generator, n: int, fresh: Callable[[], str]) -> tuple[list[str], dict[str, str]]:
    words = [fresh() for _ in range(n)]
    perm = rng.permutation(n)
    # a single cycle, so no word is its own dominant successor
    dom = {words[perm[i]]: words[perm[(i + 1) % n]] for i in range(n)}
    return words, dom


def _structured_workload(
    kind: str, seed: int, taken: set[str], *, alphabet: str, mean_extra: float, min_len: int,
    p_shared: float, p_shared_sd: float, p_dom: float, n_prompts: int, doc_len: int, n_shared: int = 20,
    prompt_len: int = 3,
) -> Workload:
    rng = rng_for("workload", kind, seed)
    fresh = _UniqueTokens(rng, alphabet, mean_extra, min_len, taken)
    shared, dom = _shared_vocab(rng, n_shared, fresh)
    docs = []
    for _ in range(n_prompts):
        p = float(np.clip(rng.normal(p_shared, p_shared_sd), 0.02, 0.95))
        docs.append(_structured_doc(rng, doc_len, shared, dom, p, p_dom, fresh))
    prompts = [" ".join(d[:prompt_len]) for d in docs]
    params = dict(alphabet=alphabet, mean_extra=mean_extra, min_len=min_len, p_shared=p_shared,
                  p_shared_sd=p_shared_sd, p_dom=p_dom, n_prompts=n_prompts, doc_len=doc_len)
    return Workload(kind, seed, prompts, docs, params)


# ---------------------------------------------------------------------------
# numbers
# ---------------------------------------------------------------------------


def _easy_sequence(seed: int, *, n_prompts: int = 40, max_n: int = 999, copies: int = 6, n_tokens: int = 150) -> Workload:
    rng = rng_for("workload", "easy-sequence", seed)
    doc = [str(i) for i in range(1, max_n + 1)]
    hi = max_n - n_tokens - 5
    if hi < 1:
        raise ConfigError("bad-workload", "max_n too small for the requested output length")
    starts = rng.choice(np.arange(1, hi + 1), size=min(n_prompts, hi), replace=False)
    prompts = [f"{s} {s + 1} {s + 2}" for s in sorted(starts.tolist())]
    return Workload("easy-sequence", seed, prompts, [doc] * copies, dict(n_prompts=n_prompts, max_n=max_n, copies=copies))


def _random_numbers(seed: int, *, n_prompts: int = 40, max_n: int = 999, doc_len: int = 170) -> Workload:
    """Random number lists no model can shortcut: no number is ever followed
    by its successor (the draft's counting guess) and no three-number context
    repeats anywhere in the workload."""
    rng = rng_for("workload", "random-numbers", seed)
    seen: set[tuple[int, ...]] = set()
    docs = []
    for _ in range(n_prompts):
        doc: list[int] = []
        while len(doc) < doc_len:
            x = int(rng.integers(1, max_n + 1))
            if doc and x == doc[-1] + 1:
                continue
            ctx = tuple(doc[-2:]) + (x,)
            if len(ctx) == 3 and ctx in seen:
                continue
            if len(ctx) == 3:
                seen.add(ctx)
            doc.append(x)
        docs.append([str(x) for x in doc])
    prompts = [" ".join(d[:3]) for d in docs]
    return Workload("random-numbers", seed, prompts, docs, dict(n_prompts=n_prompts, max_n=max_n, doc_len=doc_len))


def _secret_number(seed: int, *, n_prompts: int = 100, digits: int = 3) -> Workload:
    rng = rng_for("workload", "secret-number", seed)
    lo, hi = 10 ** (digits - 1) if digits > 1 else 0, 10**digits
    if n_prompts > hi - lo:
        raise ConfigError("bad-workload", f"only {hi - lo} distinct {digits}-digit numbers")
    values = rng.choice(np.arange(lo, hi), size=n_prompts, replace=False)
    secrets = {SECRET_TEMPLATE.format(v): str(v) for v in values.tolist()}
    return Workload("secret-number", seed, list(secrets), [], dict(n_prompts=n_prompts, digits=digits), secrets)


# ---------------------------------------------------------------------------


def workload_kinds() -> list[str]:
    return ["easy-sequence", "random-numbers", *TOPICS, *(f"language-{i}" for i in range(len(LANGUAGES))), "secret-number"]


def gen_workload(kind: str, seed: int = 0, *, taken: set[str] | None = None, **params) -> Workload:
    """Deterministic prompt set and training documents for ``kind``.

    ``taken`` is the set of unique tokens already used by other workloads of
    the same world; it is extended in place.
    """
    taken = set() if taken is None else taken
    if kind == "easy-sequence":
        return _easy_sequence(seed, **params)
    if kind == "random-numbers":
        return _random_numbers(seed, **params)
    if kind == "secret-number":
        return _secret_number(seed, **params)
    if kind in TOPICS:
        cfg = dict(TOPICS[kind], n_prompts=40, doc_len=170)
        cfg.update(params)
        return _structured_workload(kind, seed, taken, **cfg)
    if kind.startswith("language-"):
        try:
            alphabet, mean_extra, min_len, p_shared = LANGUAGES[int(kind.split("-", 1)[1])]
        except (ValueError, IndexError):
            raise ConfigError("unknown-workload", kind) from None
        cfg = dict(alphabet=alphabet, mean_extra=mean_extra, min_len=min_len, p_shared=p_shared,
                   p_shared_sd=0.05, p_dom=0.5, n_prompts=40, doc_len=170)
        cfg.update(params)
        return _structured_workload(kind, seed, taken, **cfg)
    raise ConfigError("unknown-workload", kind)


@dataclass
class World:
    kinds: tuple[str, ...]
    seed: int
    workloads: dict[str, Workload]
    draft: NgramModel
    target: NgramModel

    def prompts(self, kind: str) -> list[str]:
        return self.workloads[kind].prompts

    def recipe(self) -> dict:
        return {"kinds": list(self.kinds), "seed": self.seed}


@lru_cache(maxsize=16)
def _build_world(kinds: tuple[str, ...], seed: int, draft_order: int, target_order: int) -> World:
    taken: set[str] = set()
    workloads = {k: gen_workload(k, seed, taken=taken) for k in kinds}
    corpus: list[str] = []
    for w in workloads.values():
        corpus.extend(w.corpus())
    if not corpus:
        raise ConfigError("bad-world", f"workloads {list(kinds)} have no training documents")
    return World(kinds, seed, workloads, train_ngram(corpus, draft_order), train_ngram(corpus, target_order))


def build_world(kinds: Sequence[str], seed: int = 0, *, draft_order: int = 2, target_order: int = 4) -> World:
    """Train (and memoise) the draft/target pair for a set of workloads."""
    return _build_world(tuple(kinds), seed, draft_order, target_order)


def world_from_recipe(recipe: dict) -> World:
    unknown = set(recipe) - {"kinds", "seed", "draft_order", "target_order"}
    if unknown or "kinds" not in recipe:
        raise ConfigError("bad-world", f"world recipe needs 'kinds'; unknown keys {sorted(unknown)}")
    return build_world(recipe["kinds"], recipe.get("seed", 0), draft_order=recipe.get("draft_order", 2),
                       target_order=recipe.get("target_order", 4))
