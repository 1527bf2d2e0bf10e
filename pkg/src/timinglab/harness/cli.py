"""Command-line entry point. Every command calls the library directly and
prints a JSON summary on stdout.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .._rng import derive_seed
from ..attacks.abtest import AbAttack, AttackConfig, fit_ab
from ..attacks.active import HttpRephraser
from ..attacks.features import FeatureSpec
from ..attacks.modelio import load_model, save_model
from ..attacks.multiclass import SignatureClassifier, fit_multiclass
from ..attacks.pr import pr_sweep
from ..attacks.whitebox import (
    DifficultyScorer,
    distinguishing_rate_pair,
    greedy_coordinate_search,
    pair_objective,
    planted_loglinear_pair,
    rejection_probability,
)
from ..capture.pcap import export_pcap, import_pcap
from ..defense import DefensePolicy, overhead, write_sweep_csv, write_sweep_svg
from ..errors import ConfigError, DataError, LabError
from ..trace import read_jsonl, write_jsonl
from ..wirechan import PRESETS, observe
from .experiment import Experiment, group_by_label, labelled, parse_stream, run_experiment
from .experiments import (
    AB_KINDS,
    TOPIC_NET,
    boost_run,
    default_scenario,
    defense_run,
    extract_planted,
    extraction_run,
    planted_oracle,
    scenario_world,
    suffix_search_run,
    sweep_run,
    whitebox_run,
    zero_jitter_channel,
)
from .pipeline import Channel, generate, packets_for
from .report import format_summary, report
from .workloads import build_world, gen_workload, workload_kinds


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _features(args) -> FeatureSpec:
    return FeatureSpec(K=args.K, mode=args.mode, with_sizes=args.with_sizes)


def _attack_cfg(args) -> AttackConfig:
    return AttackConfig(features=_features(args), components=args.components, per_token_bytes=args.per_token_bytes)


def _seeds(args) -> list[int]:
    return list(args.seeds) if args.seeds else [args.seed]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_sim_run(args) -> dict:
    exp = Experiment(
        scenario=args.scenario, seeds=_seeds(args), out_dir=str(_out(args)), preset=args.preset,
        defense=None if args.interval is None else {"interval_ms": args.interval},
        arch=args.arch, features=asdict(_features(args)), per_token_bytes=args.per_token_bytes,
        n_train=args.n_train, n_test=args.n_test,
    )
    out = run_experiment(exp)
    with open(out / "metrics.csv", newline="") as fh:
        return {"out": str(out), "metrics": list(csv.DictReader(fh))}


def cmd_workload_gen(args) -> dict:
    if args.kind not in workload_kinds():
        raise ConfigError("unknown-workload", f"{args.kind}; known: {', '.join(workload_kinds())}")
    w = gen_workload(args.kind, args.seed)
    path = _out(args) / f"workload-{args.kind}-{args.seed}.json"
    path.write_text(json.dumps({"kind": w.kind, "seed": w.seed, "params": w.params, "prompts": w.prompts,
                                "docs": w.docs, "secrets": w.secrets}, ensure_ascii=False, sort_keys=True))
    return {"path": str(path), "prompts": len(w.prompts), "docs": len(w.docs)}


def cmd_import_pcap(args) -> dict:
    if not Path(args.pcap).exists():
        raise DataError("pcap-not-found", args.pcap)
    traces = import_pcap(args.pcap, args.filter, args.max_packets)
    path = _out(args) / "traces.jsonl"
    write_jsonl(path, traces)
    return {"path": str(path), "streams": len(traces), "packets": sum(len(t) for t in traces)}


def cmd_export_pcap(args) -> dict:
    traces = read_jsonl(args.traces)
    path = _out(args) / "traces.pcap"
    mapping = export_pcap(traces, path, server=args.server, nanosecond=not args.microseconds)
    return {"path": str(path), "streams": len(mapping)}


def _load_labelled(path: str, split: str | None) -> dict[str, list]:
    by = group_by_label(read_jsonl(path), split)
    if not by:
        raise DataError("empty-sample", f"no {split or ''} traces in {path}")
    return by


def cmd_attack_fit(args) -> dict:
    train = _load_labelled(args.traces, args.split)
    cfg = _attack_cfg(args)
    if len(train) == 2 and args.arch == "gmm":
        a, b = train
        model = fit_ab(train[a], train[b], cfg, (a, b))
    else:
        model = fit_multiclass(train, args.arch, cfg, replace(TOPIC_NET, seed=args.seed))
    path = _out(args) / "model.json"
    save_model(model, path)
    return {"path": str(path), "classes": list(train), "kind": type(model).__name__}


def _predict(model, traces) -> list[str]:
    if isinstance(model, AbAttack):
        a, b = model.labels
        return [b if p else a for p in model.predict(traces)]
    if isinstance(model, SignatureClassifier):
        return [str(c) for c in model.predict(traces)]
    raise ConfigError("bad-model", "infer needs an A/B or multi-class model")


def cmd_attack_infer(args) -> dict:
    model = load_model(args.model)
    traces = read_jsonl(args.traces)
    pred = _predict(model, traces)
    path = _out(args) / "predictions.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stream", "prediction"])
        w.writerows(zip((t.stream_id for t in traces), pred))
    res = {"path": str(path), "n": len(pred)}
    try:
        truth = [parse_stream(t.stream_id)[1] for t in traces]
        res["accuracy"] = float(np.mean([p == y for p, y in zip(pred, truth)]))
    except ConfigError:
        pass  # unlabelled traces: predictions only
    return res


def cmd_attack_sweep_pr(args) -> dict:
    model = load_model(args.model)
    if not isinstance(model, AbAttack):
        raise ConfigError("bad-model", "sweep-pr needs an A/B model")
    test = _load_labelled(args.traces, args.split)
    a, b = model.labels
    if set(test) != {a, b}:
        raise DataError("class-mismatch", f"model classes {a!r}, {b!r} vs traces {sorted(test)}")
    scores = np.r_[model.scores(test[a]), model.scores(test[b])]
    labels = np.r_[np.zeros(len(test[a])), np.ones(len(test[b]))]
    curve = pr_sweep(scores, labels)
    out = _out(args)
    (out / "pr").mkdir(exist_ok=True)
    path = out / "pr" / f"{args.seed}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "precision", "recall"])
        w.writerows([[f"{x:.10g}" for x in row] for row in curve.rows()])
    return {"path": str(path), "auc": curve.auc, "recall_at_precision_1": curve.recall_at_precision(1.0)}


def cmd_attack_boost(args) -> dict:
    ch = zero_jitter_channel(args.preset) if args.zero_jitter else Channel.preset(args.preset)
    return boost_run(args.n, args.suffixes, ch, args.seed, reps=args.reps, n_test=args.n_test)


def cmd_extract_secret(args) -> dict:
    ch = Channel.preset(args.preset)
    if args.secret is None:
        return extraction_run(_seeds(args), args.digits, args.reps, channel=ch, gap=args.gap)
    res = extract_planted(args.secret, args.seed, planted_oracle(ch), reps=args.reps, channel=ch, gap=args.gap)
    return {"secret": res.secret, "correct": res.secret == args.secret, "confidence": res.confidence,
            "ambiguous": res.ambiguous, "candidates": res.candidate_secrets(20)}


def cmd_suffix_search(args) -> dict:
    reph = HttpRephraser(args.rephraser_url) if args.rephraser_url else None
    res, land, mut = suffix_search_run(args.seed, rounds=args.rounds, keep=args.keep, probes=args.probes,
                                       flat=args.flat, channel=Channel.preset(args.preset), rephraser=reph)
    return {"best_template": res.best_template, "best_score": res.best_score, "history": res.history,
            "rephraser_calls": res.rephraser_calls, "planted_gap": land.gap(res.best_template)}


def cmd_difficulty(args) -> dict:
    if args.prompt is not None:
        world = build_world(AB_KINDS, args.seed)
        sc = DifficultyScorer(world.draft, world.target, args.y)
        return {"difficulty": sc(args.prompt), "rejection": rejection_probability(args.prompt, sc),
                "expected_time_ms": sc.expected_time_ms(args.prompt)}
    target, draft, vocab = planted_loglinear_pair(seed=args.seed)
    sc = DifficultyScorer(draft, target, "yes")
    pair = [["s0"], ["s1"]]
    init = vocab[:args.suffix_len]
    res = greedy_coordinate_search(pair_objective(pair, sc), vocab, init, args.budget, seed=args.seed)
    wb = whitebox_run(args.seed, suffix_len=args.suffix_len, budget=args.budget)
    return {"suffix": res.suffix, "objective": res.objective, "iterations": res.iterations,
            "rate_before": distinguishing_rate_pair(pair, init, sc),
            "rate_after": distinguishing_rate_pair(pair, res.suffix, sc),
            "open_domain_rate": wb["open_rate"]}


def cmd_defend_pace(args) -> dict:
    policy = DefensePolicy(args.interval)
    scn = default_scenario(args.scenario, args.seed)
    world = scenario_world(scn)
    ch = Channel.preset(args.preset, defense=policy)
    traces, events = {}, []
    for label, prompts in scn.classes().items():
        traces[label] = []
        for i, p in enumerate(prompts):
            s = derive_seed(args.seed, str(label), i)
            ev = generate(p, world, replace(ch.gen, seed=s), scn.max_tokens)
            events.append(ev)
            traces[label].append(observe(packets_for(ev, p.split(), ch, s, "victim")))
    path = _out(args) / "paced.jsonl"
    write_jsonl(path, labelled(traces, "paced"))
    return {"path": str(path), **asdict(overhead(events, policy))}


def cmd_defend_sweep(args) -> dict:
    points = sweep_run(args.seed, args.intervals)
    out = _out(args)
    write_sweep_csv(points, out / "sweep.csv")
    write_sweep_svg(points, out / "tradeoff.svg")
    return {"path": str(out / "sweep.csv"), "points": [asdict(p) for p in points]}


def cmd_defend_evaluate(args) -> dict:
    return defense_run(args.seed, args.interval, args.trials)


def cmd_report(args) -> dict:
    res = report(args.dir or args.out)
    print(format_summary(res.summary), file=sys.stderr)
    return {"figures": [str(p) for p in res.figures], "summary": str(res.summary_path)}


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--config", default=d(None), help="JSON file of option defaults")
    p.add_argument("--out", default=d("out"), help="output directory")
    p.add_argument("--preset", choices=sorted(PRESETS), default=d("openai-like"))


def _attack_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--arch", choices=["gmm", "convnet"], default="gmm")
    p.add_argument("--mode", choices=["ipd", "tokens"], default="ipd")
    p.add_argument("--K", type=int, default=50)
    p.add_argument("--with-sizes", action="store_true")
    p.add_argument("--components", type=int, default=3)
    p.add_argument("--per-token-bytes", type=float, default=None)


def build_parser() -> tuple[argparse.ArgumentParser, list[argparse.ArgumentParser]]:
    top = argparse.ArgumentParser(prog="timinglab", description="Timing side channels of speculative decoding.")
    _globals(top, suppress=False)
    groups = top.add_subparsers(dest="group", required=True)
    leaves: list[argparse.ArgumentParser] = []

    def leaf(sub, name, fn, help):
        p = sub.add_parser(name, help=help)
        _globals(p, suppress=True)
        p.set_defaults(fn=fn)
        leaves.append(p)
        return p

    sim = groups.add_parser("sim", help="simulate and attack a scenario").add_subparsers(dest="cmd", required=True)
    p = leaf(sim, "run", cmd_sim_run, "run an experiment and write traces, models and metrics")
    p.add_argument("--scenario", default="ab", help="ab | topics | languages | path to scenario JSON")
    p.add_argument("--seeds", type=int, nargs="*")
    p.add_argument("--n-train", type=int, default=100)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--interval", type=float, default=None, help="pace the server at this interval (ms)")
    _attack_opts(p)

    wl = groups.add_parser("workload", help="workload generators").add_subparsers(dest="cmd", required=True)
    p = leaf(wl, "gen", cmd_workload_gen, "write a workload's prompts and documents")
    p.add_argument("--kind", required=True)

    cap = groups.add_parser("capture", help="pcap conversion").add_subparsers(dest="cmd", required=True)
    p = leaf(cap, "import-pcap", cmd_import_pcap, "pcap to JSONL traces")
    p.add_argument("pcap")
    p.add_argument("--filter", required=True, help="server endpoint ip:port")
    p.add_argument("--max-packets", type=int, default=None)
    p = leaf(cap, "export-pcap", cmd_export_pcap, "JSONL traces to pcap")
    p.add_argument("traces")
    p.add_argument("--server", default="10.0.0.1:443")
    p.add_argument("--microseconds", action="store_true")

    at = groups.add_parser("attack", help="attacks").add_subparsers(dest="cmd", required=True)
    p = leaf(at, "fit", cmd_attack_fit, "fit a classifier on labelled traces")
    p.add_argument("--traces", required=True)
    p.add_argument("--split", default="train")
    _attack_opts(p)
    p = leaf(at, "infer", cmd_attack_infer, "label traces with a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--traces", required=True)
    p = leaf(at, "sweep-pr", cmd_attack_sweep_pr, "precision/recall sweep of an A/B model")
    p.add_argument("--model", required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--split", default="test")
    p = leaf(at, "boost", cmd_attack_boost, "1-of-N secret recovery over many suffixes")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--suffixes", type=int, default=20)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--n-test", type=int, default=None)
    p.add_argument("--zero-jitter", action="store_true")
    p = leaf(at, "extract-secret", cmd_extract_secret, "recover a planted secret digit by digit")
    p.add_argument("--secret", default=None, help="planted secret; omit to run over --seeds")
    p.add_argument("--seeds", type=int, nargs="*")
    p.add_argument("--digits", type=int, default=3)
    p.add_argument("--reps", type=int, default=9)
    p.add_argument("--gap", type=float, default=None)
    p = leaf(at, "suffix-search", cmd_suffix_search, "search for a better probing question")
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--keep", type=int, default=10)
    p.add_argument("--probes", type=int, default=64)
    p.add_argument("--flat", action="store_true")
    p.add_argument("--rephraser-url", default=None)
    p = leaf(at, "difficulty", cmd_difficulty, "white-box difficulty score or suffix search")
    p.add_argument("--prompt", default=None)
    p.add_argument("--y", default="1")
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--suffix-len", type=int, default=8)

    de = groups.add_parser("defend", help="constant-rate pacing").add_subparsers(dest="cmd", required=True)
    p = leaf(de, "pace", cmd_defend_pace, "pace a scenario's responses and write the traces")
    p.add_argument("--scenario", default="ab")
    p.add_argument("--interval", type=float, default=20.0)
    p = leaf(de, "sweep", cmd_defend_sweep, "overhead/latency trade-off over intervals")
    p.add_argument("--intervals", type=float, nargs="+", default=[10, 20, 40, 80])
    p = leaf(de, "evaluate", cmd_defend_evaluate, "refit every attack on paced traces")
    p.add_argument("--interval", type=float, default=20.0)
    p.add_argument("--trials", type=int, default=1000)

    p = leaf(groups, "report", cmd_report, "figures and summary from an output directory")
    p.add_argument("dir", nargs="?", default=None)
    return top, leaves


def _load_config(argv: Sequence[str]) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    path = Path(known.config)
    if not path.exists():
        raise ConfigError("config-not-found", str(path))
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("bad-config", f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("bad-config", f"{path}: expected a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg = _load_config(argv)
        top, leaves = build_parser()
        if cfg:
            dests = {a.dest for p in [top, *leaves] for a in p._actions}
            unknown = set(cfg) - dests
            if unknown:
                raise ConfigError("bad-config", f"unknown options {sorted(unknown)}")
            top.set_defaults(**{k: v for k, v in cfg.items() if k in {"seed", "out", "preset"}})
            for p in leaves:
                own = {a.dest for a in p._actions} - {"seed", "out", "preset", "config"}
                p.set_defaults(**{k: v for k, v in cfg.items() if k in own})
                for a in p._actions:
                    if a.dest in cfg:
                        a.required = False  # supplied by the config file
        args = top.parse_args(argv)
        result = args.fn(args)
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return DataError.exit_code
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
