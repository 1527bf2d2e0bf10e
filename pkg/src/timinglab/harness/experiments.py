"""End-to-end experiment recipes. Each returns plain metric dicts so the CLI,
the acceptance suite and ``run_experiment`` share one implementation."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Hashable, Sequence

import numpy as np

from .._rng import derive_seed, rng_for
from ..attacks.abtest import AbAttack, AttackConfig, ab_accuracy, fit_ab
from ..attacks.active import (
    ExtractionResult,
    PlantedLandscape,
    Rephraser,
    SearchResult,
    SecondTokenOracle,
    TemplateMutator,
    distinguishing_rate,
    extract_secret,
    fit_second_token_oracle,
    suffix_search,
)
from ..attacks.boost import boost_fit, boost_infer
from ..attacks.convnet import ConvNetConfig
from ..attacks.features import FeatureSpec
from ..attacks.multiclass import Conversation, SignatureClassifier, fit_multiclass, multi_turn_accuracy
from ..attacks.pr import PRCurve, pr_sweep
from ..attacks.whitebox import DifficultyScorer, greedy_coordinate_search, identification_rate, planted_loglinear_pair
from ..defense import DefensePolicy, evaluate_defense, overhead, pace, tradeoff_sweep
from ..errors import ConfigError
from ..specsim import (
    PROBE_TEMPLATES,
    ScriptedGapResponder,
    Scenario,
    SpeculativeConfig,
    Suffix,
    baseline_generate,
    span_ns,
    speculative_generate,
)
from ..trace import Trace
from ..wirechan import NetModel, S2C, PacketRecord, frame, observe_all, transmit
from .pipeline import Channel, capture, capture_many, generate, serve
from .victims import GapVictim, PlantedBoostVictim, calibration_traces
from .workloads import World, build_world, world_from_recipe

AB_KINDS = ("easy-sequence", "random-numbers")
TOPIC_KINDS = ("topic-A", "topic-B")
LANGUAGE_KINDS = tuple(f"language-{i}" for i in range(10))
BEST_TEMPLATE = PROBE_TEMPLATES[-1][0]
SEED_TEMPLATE = PROBE_TEMPLATES[0][0]


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------


def default_scenario(name: str, seed: int = 0) -> Scenario:
    """Built-in scenarios: ``ab``, ``topics``, ``languages``."""
    kinds = {"ab": AB_KINDS, "topics": TOPIC_KINDS, "languages": LANGUAGE_KINDS}.get(name)
    if kinds is None:
        raise ConfigError("unknown-scenario", name)
    world = build_world(kinds, seed)
    labels = {p: k for k in kinds for p in world.prompts(k)}
    return Scenario(name, list(labels), {"name": "label_map", "params": {"labels": labels}},
                    max_tokens=150, turns=8 if name == "topics" else 1, world=world.recipe())


def scenario_world(scn: Scenario) -> World:
    if scn.world is None:
        raise ConfigError("bad-scenario", f"scenario {scn.id} has no world recipe")
    return world_from_recipe(scn.world)


def split_prompts(scn: Scenario) -> tuple[dict, dict]:
    """First half of each class's prompts for training, second half for testing."""
    train, test = {}, {}
    for label, prompts in scn.classes().items():
        h = max(1, len(prompts) // 2)
        train[label], test[label] = prompts[:h], prompts[h:] or prompts[:h]
    return train, test


def traces_by_class(prompts: dict, world: World, channel: Channel, seed: int, per_class: int, n_tokens: int) -> dict:
    out = {}
    for label, ps in prompts.items():
        reps = -(-per_class // len(ps))
        out[label] = capture_many(ps, world, channel, derive_seed(seed, str(label)), reps, n_tokens=n_tokens)[:per_class]
    return out


# ---------------------------------------------------------------------------
# speculative speedup
# ---------------------------------------------------------------------------


def speedup(seed: int = 0, cfg: SpeculativeConfig | None = None, n_tokens: int = 150) -> dict[str, float]:
    """Tokens/sec of speculative over baseline decoding per workload (mean over prompts)."""
    cfg = cfg or SpeculativeConfig(jitter_sigma=0.0)
    world = build_world(AB_KINDS, seed)
    out = {}
    for kind in AB_KINDS:
        ratios = []
        for p in world.prompts(kind):
            spec = span_ns(speculative_generate(p, world.draft, world.target, cfg, n_tokens))
            base = span_ns(baseline_generate(p, world.target, cfg, n_tokens))
            ratios.append(base / spec)
        out[kind] = float(np.mean(ratios))
    return out


# ---------------------------------------------------------------------------
# passive A/B
# ---------------------------------------------------------------------------


@dataclass
class AbRun:
    attack: AbAttack
    train: dict
    test: dict
    metrics: dict[str, float]
    curve: PRCurve


def ab_run(
    scn: Scenario,
    channel: Channel,
    seed: int = 0,
    *,
    n_train: int = 100,
    n_test: int = 100,
    cfg: AttackConfig | None = None,
) -> AbRun:
    classes = list(scn.classes())
    if len(classes) != 2:
        raise ConfigError("bad-scenario", f"A/B needs two classes, got {len(classes)}")
    world = scenario_world(scn)
    tr_p, te_p = split_prompts(scn)
    train = traces_by_class(tr_p, world, channel, derive_seed(seed, "train"), n_train, scn.max_tokens)
    test = traces_by_class(te_p, world, channel, derive_seed(seed, "test"), n_test, scn.max_tokens)
    a, b = classes
    attack = fit_ab(train[a], train[b], cfg, (str(a), str(b)))
    scores = np.r_[attack.scores(test[a]), attack.scores(test[b])]
    labels = np.r_[np.zeros(len(test[a])), np.ones(len(test[b]))]
    curve = pr_sweep(scores, labels)
    metrics = {
        "accuracy": ab_accuracy(attack, test[a], test[b]),
        "auc": curve.auc,
        "recall_at_precision_1": curve.recall_at_precision(1.0),
    }
    return AbRun(attack, train, test, metrics, curve)


def declustering(seed: int = 0, K: int = 20, per_token_bytes: float = 152.0) -> dict[str, float]:
    """A/B on claude-like (timer-merged) framing: raw IPDs vs reconstructed token delays."""
    scn = default_scenario("ab", seed)
    ch = Channel.preset("claude-like")
    raw = ab_run(scn, ch, seed, cfg=AttackConfig(features=FeatureSpec(K=K, mode="ipd")))
    tok = ab_run(scn, ch, seed, cfg=AttackConfig(features=FeatureSpec(K=K, mode="tokens"), per_token_bytes=per_token_bytes))
    return {"raw_accuracy": raw.metrics["accuracy"], "token_accuracy": tok.metrics["accuracy"],
            "raw_auc": raw.metrics["auc"], "token_auc": tok.metrics["auc"]}


# ---------------------------------------------------------------------------
# multi-class and multi-turn
# ---------------------------------------------------------------------------


class ScriptedReplyGenerator:
    """Stands in for the human-like follow-up writer: a seeded template
    reply, sent to a separate helper endpoint."""

    TEMPLATES = [
        "Thanks , could you explain {w} in more detail ?",
        "Interesting . What else should I know about {w} ?",
        "Okay . And how does {w} relate to what you said ?",
        "Got it . Can you give an example involving {w} ?",
    ]

    def reply(self, response_tokens: Sequence[str], seed: int) -> str:
        rng = rng_for("reply", seed)
        w = response_tokens[int(rng.integers(len(response_tokens)))] if response_tokens else "that"
        return self.TEMPLATES[int(rng.integers(len(self.TEMPLATES)))].format(w=w)


@dataclass
class DriveResult:
    conversations: list[Conversation]
    victim_streams: list[str]
    helper_streams: list[str]


HELPER_PREFIX = "helper"
VICTIM_PREFIX = "victim"


def multi_turn_drive(
    scn: Scenario,
    turns: int,
    channel: Channel,
    seed: int = 0,
    *,
    n_conversations: int = 100,
    prompts: dict | None = None,
    replies: ScriptedReplyGenerator | None = None,
) -> DriveResult:
    """Simulate conversations: victim query, then a scripted follow-up from the
    reply generator, which picks the next same-class prompt. The tap sees both
    endpoints; only victim-endpoint streams are kept."""
    world = scenario_world(scn)
    pools = prompts or scn.classes()
    replies = replies or ScriptedReplyGenerator()
    labels = list(pools)
    helper_cfg = replace(channel.gen, seed=0)
    convs, victims, helpers = [], [], []
    for c in range(n_conversations):
        label = labels[c % len(labels)]
        pool = pools[label]
        if len(pool) < turns:
            raise ConfigError("bad-scenario", f"class {label!r} has {len(pool)} prompts for {turns} turns")
        rng = rng_for("drive", seed, c)
        remaining = list(pool)
        prompt = remaining.pop(int(rng.integers(len(remaining))))
        tap: list[PacketRecord] = []
        t0 = 0
        for t in range(turns):
            sid = f"{VICTIM_PREFIX}-{c}-{t}"
            pk = serve(prompt, world, channel, derive_seed(seed, c, t), n_tokens=scn.max_tokens, stream_id=sid, start_ns=t0)
            tap.extend(pk)
            t0 = pk[-1].ts_ns + 1_000_000_000
            resp = [tok for p in pk if p.dir == S2C for tok in p.tokens]
            text = replies.reply(resp, derive_seed(seed, c, t))
            hid = f"{HELPER_PREFIX}-{c}-{t}"
            hcfg = replace(helper_cfg, seed=derive_seed("helper", seed, c, t))
            hev = baseline_generate(text, _echo_model(text), hcfg, len(text.split()))
            hp = transmit([p._replace(ts_ns=p.ts_ns + t0) for p in frame(hev, channel.framing, hid)],
                          replace(channel.net, seed=derive_seed("helper-net", seed, c, t)))
            tap.extend(hp)
            t0 = hp[-1].ts_ns + 1_000_000_000
            if t + 1 < turns:
                pick = derive_seed("next", text) % len(remaining)
                prompt = remaining.pop(pick)
        tap.sort(key=lambda p: p.ts_ns)
        streams = observe_all(tap)
        kept = [s for s in streams if s.stream_id.startswith(VICTIM_PREFIX + "-")]
        kept.sort(key=lambda s: int(s.stream_id.rsplit("-", 1)[1]))
        victims.extend(s.stream_id for s in kept)
        helpers.extend(s.stream_id for s in streams if s.stream_id.startswith(HELPER_PREFIX))
        convs.append(Conversation(label, kept))
    return DriveResult(convs, victims, helpers)


class _Echo:
    """Model that reads back a fixed text (the reply endpoint's output)."""

    order = None

    def __init__(self, text: str):
        self.toks = text.split()

    def greedy(self, context):
        return self.toks[(len(context) - len(self.toks)) % len(self.toks)]

    def distribution(self, context):
        return {self.greedy(context): 1.0}


def _echo_model(text: str) -> _Echo:
    return _Echo(text)


TOPIC_NET = ConvNetConfig()


def topic_run(seed: int = 0, turns: Sequence[int] = (1, 2, 4, 8), *, n_conversations: int = 100,
              channel: Channel | None = None, train_per_class: int = 100) -> tuple[SignatureClassifier, dict[int, float]]:
    scn = default_scenario("topics", seed)
    channel = channel or Channel()
    world = scenario_world(scn)
    tr_p, te_p = split_prompts(scn)
    train = traces_by_class(tr_p, world, channel, derive_seed(seed, "train"), train_per_class, scn.max_tokens)
    clf = fit_multiclass(train, "convnet", AttackConfig(), replace(TOPIC_NET, seed=seed))
    drive = multi_turn_drive(scn, max(turns), channel, derive_seed(seed, "drive"), n_conversations=n_conversations, prompts=te_p)
    return clf, multi_turn_accuracy(clf, drive.conversations, turns)


def language_run(seed: int = 0, *, arch: str = "convnet", train_per_class: int = 100, test_per_class: int = 40) -> tuple[SignatureClassifier, float, np.ndarray]:
    scn = default_scenario("languages", seed)
    world = scenario_world(scn)
    ch = Channel()
    tr_p, te_p = split_prompts(scn)
    train = traces_by_class(tr_p, world, ch, derive_seed(seed, "train"), train_per_class, scn.max_tokens)
    test = traces_by_class(te_p, world, ch, derive_seed(seed, "test"), test_per_class, scn.max_tokens)
    clf = fit_multiclass(train, arch, AttackConfig(features=FeatureSpec(with_sizes=True)), replace(TOPIC_NET, seed=seed))
    return clf, clf.accuracy(test), clf.confusion(test)


# ---------------------------------------------------------------------------
# active attacks
# ---------------------------------------------------------------------------


def zero_jitter_channel(preset: str = "openai-like") -> Channel:
    return Channel.preset(preset, gen=SpeculativeConfig(jitter_sigma=0.0), net=NetModel(20.0, 0.0))


def boost_run(n: int, n_suffixes: int, channel: Channel, seed: int = 0, *, reps: int = 1, n_test: int | None = None) -> dict[str, float]:
    victim = PlantedBoostVictim(n, n_suffixes, seed, channel=channel)
    ens = boost_fit(n, n_suffixes, victim.trace, reps=reps, features=FeatureSpec(K=victim.n_tokens - 1))
    idx = range(n) if n_test is None else rng_for("boost-test", seed).choice(n, min(n, n_test), replace=False).tolist()
    hits, single = 0, []
    for i in idx:
        res = boost_infer(ens, lambda j, i=i: victim.trace(i, j, 10_000 + i))
        hits += res.index == i
        single.append(res.per_suffix == i)
    return {"recovery": hits / len(idx), "best_single_suffix": float(np.max(np.mean(single, axis=0)))}


def second_token_run(seed: int = 0, trials: int = 1000, template: str = BEST_TEMPLATE, channel: Channel | None = None) -> dict[str, float]:
    """Oracle verdicts vs planted truth over random digit questions."""
    channel = channel or Channel()
    acc, rej = calibration_traces(template, channel, 40, derive_seed(seed, "cal"))
    oracle = fit_second_token_oracle(acc, rej)
    rng = rng_for("oracle-trials", seed)
    agree_match = agree_round = 0
    for t in range(trials):
        secret = str(int(rng.integers(0, 10)))
        guess = int(secret) if rng.random() < 0.5 else int(rng.integers(0, 10))
        victim = GapVictim(ScriptedGapResponder(secret, seed=derive_seed(seed, t)), channel, seed=derive_seed(seed, t))
        sfx = Suffix(template, guess)
        verdict = oracle.accepted(victim.trace(sfx, t))
        agree_match += verdict == (str(guess) == secret)
        agree_round += verdict == victim.truth(sfx, t)
    return {"agreement_with_digit": agree_match / trials, "agreement_with_round": agree_round / trials,
            "threshold_ms": oracle.threshold_ns / 1e6}


def planted_oracle(channel: Channel, template: str = BEST_TEMPLATE, seed: int = 12345) -> SecondTokenOracle:
    """Second-token oracle calibrated on a victim the attacker controls."""
    acc, rej = calibration_traces(template, channel, 40, seed)
    return fit_second_token_oracle(acc, rej)


def extract_planted(secret: str, seed: int, oracle: SecondTokenOracle, *, reps: int = 9, template: str = BEST_TEMPLATE,
                    channel: Channel | None = None, gap: float | None = None) -> ExtractionResult:
    """Run digit extraction against a planted victim holding ``secret``."""
    if not secret.isdigit():
        raise ConfigError("bad-secret", f"{secret!r} is not a digit string")
    channel = channel or Channel()
    resp = ScriptedGapResponder(secret, seed=seed) if gap is None else ScriptedGapResponder(secret, {template: gap}, seed)
    victim = GapVictim(resp, channel, seed=seed)
    return extract_secret(victim.trace, oracle, template, len(secret), reps, seed=seed)


def extraction_run(seeds: Sequence[int], digits: int = 3, reps: int = 9, template: str = BEST_TEMPLATE,
                   channel: Channel | None = None, gap: float | None = None) -> dict[str, float]:
    channel = channel or Channel()
    oracle = planted_oracle(channel, template)
    exact = ambiguous = 0
    for s in seeds:
        rng = rng_for("extract-secret", s)
        secret = "".join(str(d) for d in rng.integers(0, 10, digits))
        res = extract_planted(secret, s, oracle, reps=reps, template=template, channel=channel, gap=gap)
        exact += res.secret == secret
        ambiguous += sum(res.ambiguous)
    return {"exact": exact / len(seeds), "ambiguous_positions": ambiguous / (len(seeds) * digits)}


def suffix_search_run(seed: int = 0, *, rounds: int = 10, keep: int = 10, probes: int = 64, flat: bool = False,
                      channel: Channel | None = None, rephraser: Rephraser | None = None,
                      ) -> tuple[SearchResult, PlantedLandscape, Rephraser]:
    channel = channel or Channel()
    acc, rej = calibration_traces(BEST_TEMPLATE, channel, 40, derive_seed(seed, "cal"))
    oracle = fit_second_token_oracle(acc, rej)
    land = PlantedLandscape(seed=seed, flat=flat)
    secrets = ["527", "301", "888", "046", "719"]

    def scorer(tpl: str) -> float:
        gap = land.gap(tpl)
        mk = lambda sec: GapVictim(ScriptedGapResponder(sec, {tpl: gap}, seed), channel, seed=seed).trace  # noqa: E731
        return distinguishing_rate(tpl, mk, oracle, secrets, probes, seed)

    mut = rephraser if rephraser is not None else TemplateMutator()
    return suffix_search(SEED_TEMPLATE, mut, scorer, rounds, keep, seed=seed), land, mut


def whitebox_run(seed: int = 0, *, n_secrets: int = 10, suffix_len: int = 8, budget: int = 100) -> dict[str, float]:
    """Coordinate search on the planted log-linear pair, once for a 1-of-2
    secret and once for an open 1-of-``n_secrets`` secret."""
    out: dict[str, float] = {}
    for name, n in (("pair", 2), ("open", n_secrets)):
        target, draft, vocab = planted_loglinear_pair(seed=seed, n_secrets=n)
        sc = DifficultyScorer(draft, target, "yes")
        prompts = [[f"s{i}"] for i in range(n)]
        obj = lambda sfx, prompts=prompts, sc=sc: identification_rate(prompts, sfx, sc)  # noqa: E731
        res = greedy_coordinate_search(obj, vocab, vocab[:suffix_len], budget, seed=seed)
        out[f"{name}_rate_before"] = obj(vocab[:suffix_len])
        out[f"{name}_rate"] = res.objective
    return out


# ---------------------------------------------------------------------------
# defense
# ---------------------------------------------------------------------------


def default_defense_events(seed: int = 0, n_tokens: int = 150) -> list:
    """Generations of the hard (random-number) workload: about one token per 24 ms."""
    world = build_world(AB_KINDS, seed)
    cfg = SpeculativeConfig()
    return [generate(p, world, replace(cfg, seed=derive_seed(seed, i)), n_tokens)
            for i, p in enumerate(world.prompts("random-numbers"))]


def sweep_run(seed: int = 0, intervals: Sequence[float] = (10, 20, 40, 80)):
    return tradeoff_sweep(default_defense_events(seed), intervals)


def defense_run(seed: int = 0, interval_ms: float = 20.0, n_trials: int = 1000) -> dict[str, float]:
    """Every attack family refitted on paced traces (adaptive adversary)."""
    policy = DefensePolicy(interval_ms)
    out: dict[str, float] = {}
    paced = Channel(defense=policy)
    scn = default_scenario("ab", seed)
    half = n_trials // 2
    for mode, cfg in (("ipd", AttackConfig()), ("tokens", AttackConfig(features=FeatureSpec(mode="tokens"), per_token_bytes=152.0))):
        run = ab_run(scn, paced, seed, n_test=half, cfg=cfg)
        out[f"ab_{mode}_accuracy"] = run.metrics["accuracy"]
    base = ab_run(scn, Channel(), seed, n_test=half)
    out["ab_undefended_accuracy"] = base.metrics["accuracy"]

    tscn = default_scenario("topics", seed)
    world = scenario_world(tscn)
    tr_p, te_p = split_prompts(tscn)
    train = traces_by_class(tr_p, world, paced, derive_seed(seed, "train"), 100, tscn.max_tokens)
    test = traces_by_class(te_p, world, paced, derive_seed(seed, "test"), half, tscn.max_tokens)
    for arch in ("gmm", "convnet"):
        ev = evaluate_defense(lambda tr, arch=arch: fit_multiclass(tr, arch, AttackConfig(), replace(TOPIC_NET, seed=seed)).predict,
                              train, test)
        out[f"topic_{arch}_accuracy"] = ev.accuracy
    return out


def indistinguishable(events_a, events_b, policy: DefensePolicy, channel: Channel | None = None) -> bool:
    """Paced server output for two generations is identical in (ts, size)."""
    channel = channel or Channel()
    pa = pace(events_a, policy, channel.framing)
    pb = pace(events_b, policy, channel.framing)
    return [(p.ts_ns, p.size_bytes) for p in pa] == [(p.ts_ns, p.size_bytes) for p in pb]
