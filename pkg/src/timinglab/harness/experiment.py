"""Reproducible experiment records and their on-disk artifacts.

Layout of ``out_dir``::

    experiment.json          the record itself
    metrics.csv              scenario, seed, metric, value (ordered by seed)
    traces/<seed>.jsonl      every train/test trace, stream id "split|label|n"
    models/<seed>.json       fitted attack
    pr/<seed>.csv            PR curve (two-class scenarios)
    confusion/<seed>.csv     confusion matrix (multi-class scenarios)
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .._rng import derive_seed
from ..attacks.abtest import AttackConfig
from ..attacks.features import FeatureSpec
from ..attacks.modelio import save_model
from ..attacks.multiclass import fit_multiclass
from ..defense import DefensePolicy
from ..errors import ConfigError
from ..specsim import Scenario, SpeculativeConfig
from ..trace import Trace, write_jsonl
from ..wirechan import NetModel
from .experiments import ab_run, default_scenario, scenario_world, split_prompts, traces_by_class
from .pipeline import Channel

BUILTIN_SCENARIOS = ("ab", "topics", "languages")
METRIC_COLUMNS = ["scenario", "seed", "metric", "value"]
STREAM_SEP = "|"


@dataclass
class Experiment:
    scenario: str  # built-in name or path to a scenario JSON file
    seeds: list[int] = field(default_factory=lambda: [0])
    out_dir: str = "out"
    preset: str = "openai-like"
    timing: dict = field(default_factory=dict)  # SpeculativeConfig overrides
    net: dict | None = None  # NetModel fields
    defense: dict | None = None  # DefensePolicy dict
    arch: str = "gmm"
    features: dict = field(default_factory=dict)  # FeatureSpec fields
    per_token_bytes: float | None = None
    n_train: int = 100
    n_test: int = 100

    def channel(self) -> Channel:
        try:
            gen = SpeculativeConfig(**self.timing)
            net = NetModel(**self.net) if self.net else None
        except TypeError as exc:
            raise ConfigError("bad-config", str(exc)) from None
        kw = {"gen": gen}
        if net is not None:
            kw["net"] = net
        if self.defense:
            kw["defense"] = DefensePolicy.from_dict(self.defense)
        return Channel.preset(self.preset, **kw)

    def attack_config(self) -> AttackConfig:
        try:
            return AttackConfig(features=FeatureSpec(**self.features), per_token_bytes=self.per_token_bytes)
        except TypeError as exc:
            raise ConfigError("bad-config", str(exc)) from None

    def load_scenario(self, seed: int) -> Scenario:
        if self.scenario in BUILTIN_SCENARIOS:
            return default_scenario(self.scenario, seed)
        return Scenario.load(self.scenario)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Experiment":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown or "scenario" not in d:
            raise ConfigError("bad-config", f"experiment needs 'scenario'; unknown keys {sorted(unknown)}")
        return cls(**d)


def labelled(traces: dict, split: str) -> list[Trace]:
    """Rename streams to ``split|label|n`` so labels survive a JSONL round trip."""
    out = []
    for label, trs in traces.items():
        for n, t in enumerate(trs):
            out.append(Trace(t.ts_ns, t.size, t.s2c, STREAM_SEP.join((split, str(label), str(n)))))
    return out


def parse_stream(stream_id: str) -> tuple[str, str]:
    """(split, label) from a ``split|label|n`` stream id."""
    parts = stream_id.split(STREAM_SEP)
    if len(parts) != 3:
        raise ConfigError("unlabelled-trace", f"stream {stream_id!r} is not split|label|n")
    return parts[0], parts[1]


def group_by_label(traces: Sequence[Trace], split: str | None = None) -> dict[str, list[Trace]]:
    out: dict[str, list[Trace]] = {}
    for t in traces:
        sp, label = parse_stream(t.stream_id)
        if split is None or sp == split:
            out.setdefault(label, []).append(t)
    return dict(sorted(out.items()))


def _fmt(v: float) -> str:
    return f"{float(v):.10g}"


def _run_seed(exp: Experiment, seed: int, out: Path) -> list[tuple[str, float]]:
    scn = exp.load_scenario(seed)
    channel = exp.channel()
    cfg = exp.attack_config()
    if len(scn.classes()) == 2 and exp.arch == "gmm":
        run = ab_run(scn, channel, seed, n_train=exp.n_train, n_test=exp.n_test, cfg=cfg)
        train, test, model = run.train, run.test, run.attack
        metrics = sorted(run.metrics.items())
        with open(out / "pr" / f"{seed}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "precision", "recall"])
            w.writerows([[_fmt(x) for x in row] for row in run.curve.rows()])
    else:
        world = scenario_world(scn)
        tr_p, te_p = split_prompts(scn)
        train = traces_by_class(tr_p, world, channel, derive_seed(seed, "train"), exp.n_train, scn.max_tokens)
        test = traces_by_class(te_p, world, channel, derive_seed(seed, "test"), exp.n_test, scn.max_tokens)
        model = fit_multiclass(train, exp.arch, cfg)
        metrics = [("accuracy", model.accuracy(test))]
        cm = model.confusion(test)
        with open(out / "confusion" / f"{seed}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true"] + [str(c) for c in model.classes])
            for c, row in zip(model.classes, cm.tolist()):
                w.writerow([str(c)] + row)
    write_jsonl(out / "traces" / f"{seed}.jsonl", labelled(train, "train") + labelled(test, "test"))
    save_model(model, out / "models" / f"{seed}.json")
    return metrics


def run_experiment(exp: Experiment) -> Path:
    """Run every seed and write the artifacts. Reruns overwrite with identical bytes."""
    if not exp.seeds:
        raise ConfigError("bad-config", "no seeds")
    if exp.scenario not in BUILTIN_SCENARIOS and not Path(exp.scenario).exists():
        raise ConfigError("scenario-not-found", exp.scenario)
    out = Path(exp.out_dir)
    for sub in ("traces", "models", "pr", "confusion"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    (out / "experiment.json").write_text(json.dumps(exp.to_dict(), indent=2, sort_keys=True) + "\n")
    name = Path(exp.scenario).stem if exp.scenario not in BUILTIN_SCENARIOS else exp.scenario
    rows = []
    for seed in sorted(set(exp.seeds)):
        for metric, value in _run_seed(exp, seed, out):
            rows.append([name, seed, metric, _fmt(value)])
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        w.writerows(rows)
    return out


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [dict(r, seed=int(r["seed"]), value=float(r["value"])) for r in csv.DictReader(fh)]


def summarize(rows: Sequence[dict]) -> list[dict]:
    """Mean and standard deviation of every (scenario, metric) across seeds."""
    groups: dict[tuple[str, str], list[float]] = {}
    for r in rows:
        groups.setdefault((r["scenario"], r["metric"]), []).append(r["value"])
    return [{"scenario": s, "metric": m, "n": len(v), "mean": float(np.mean(v)), "std": float(np.std(v))}
            for (s, m), v in sorted(groups.items())]
