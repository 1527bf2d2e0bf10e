import csv
import json
import time

import numpy as np
import pytest

from timinglab.attacks.active import SecondTokenOracle
from timinglab.attacks.modelio import SCHEMA_VERSION, load_model, model_from_json, model_to_json, save_model
from timinglab.errors import ConfigError, DataError
from timinglab.harness import Experiment, report, run_experiment
from timinglab.harness.experiment import group_by_label, labelled, parse_stream, read_metrics
from timinglab.harness.experiments import HELPER_PREFIX, VICTIM_PREFIX, default_scenario, multi_turn_drive
from timinglab.harness.pipeline import Channel
from timinglab.harness.report import confusion_matrix
from timinglab.trace import Trace, read_jsonl


@pytest.fixture(scope="module")
def ab_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ab")
    t0 = time.perf_counter()
    run_experiment(Experiment("ab", seeds=[0], out_dir=str(out)))
    return out, time.perf_counter() - t0


def test_ab_pipeline_under_a_minute(ab_dir):
    out, elapsed = ab_dir
    assert elapsed < 60
    rows = read_metrics(out / "metrics.csv")
    acc = {r["metric"]: r["value"] for r in rows}["accuracy"]
    assert acc >= 0.95
    for sub in ("traces/0.jsonl", "models/0.json", "pr/0.csv", "experiment.json"):
        assert (out / sub).exists()


def test_rerun_is_byte_identical(ab_dir, tmp_path):
    out, _ = ab_dir
    exp = Experiment.from_dict(json.loads((out / "experiment.json").read_text()) | {"out_dir": str(tmp_path)})
    run_experiment(exp)
    for name in ("metrics.csv", "pr/0.csv", "traces/0.jsonl", "models/0.json"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_persisted_traces_carry_labels(ab_dir):
    out, _ = ab_dir
    traces = read_jsonl(out / "traces" / "0.jsonl")
    by = group_by_label(traces, "test")
    assert set(by) == {"easy-sequence", "random-numbers"}
    model = load_model(out / "models" / "0.json")
    pred = model.predict(by["random-numbers"])
    assert pred.mean() > 0.9


def test_experiment_errors(tmp_path):
    with pytest.raises(ConfigError, match="scenario-not-found"):
        run_experiment(Experiment(str(tmp_path / "missing.json"), out_dir=str(tmp_path)))
    with pytest.raises(ConfigError, match="bad-config"):
        Experiment.from_dict({"scenario": "ab", "colour": 1})
    with pytest.raises(ConfigError, match="bad-config"):
        run_experiment(Experiment("ab", seeds=[], out_dir=str(tmp_path)))
    with pytest.raises(ConfigError, match="bad-config"):
        Experiment("ab", timing={"nope": 1}).channel()


def test_stream_labels_round_trip():
    t = Trace([0, 1], [200, 200], [True, True], "x")
    lab = labelled({"a": [t, t], "b": [t]}, "train")
    assert [x.stream_id for x in lab] == ["train|a|0", "train|a|1", "train|b|0"]
    assert parse_stream("test|b|3") == ("test", "b")
    with pytest.raises(ConfigError, match="unlabelled-trace"):
        parse_stream("victim-0")


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def test_report_needs_metrics(tmp_path):
    with pytest.raises(DataError, match="no-metrics"):
        report(tmp_path)
    with pytest.raises(DataError, match="no-metrics"):
        report(tmp_path / "absent")


def test_report_from_persisted_artifacts(ab_dir):
    out, _ = ab_dir
    res = report(out)
    names = {p.name for p in res.figures}
    assert {"pr-0.svg", "delays-0.svg"} <= names
    svg = (out / "figures" / "pr-0.svg").read_text()
    assert "AUC" in svg
    summary = list(csv.DictReader(open(out / "summary.csv")))
    assert {r["metric"] for r in summary} >= {"accuracy", "pr_auc"}
    again = report(out)
    assert (out / "figures" / "pr-0.svg").read_text() == svg and len(again.figures) == len(res.figures)


def test_confusion_rows_sum_to_trial_counts(tmp_path):
    exp = Experiment("topics", seeds=[1], out_dir=str(tmp_path), arch="convnet", n_train=20, n_test=15)
    run_experiment(exp)
    classes, cm = confusion_matrix(tmp_path / "confusion" / "1.csv")
    assert cm.sum(axis=1).tolist() == [15] * len(classes)
    res = report(tmp_path)
    assert any(p.name == "confusion-1.svg" for p in res.figures)


# ---------------------------------------------------------------------------
# multi-turn driver
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("turns", [1, 8])
def test_multi_turn_stream_counts_and_helper_exclusion(turns):
    scn = default_scenario("topics", 0)
    res = multi_turn_drive(scn, turns, Channel(), 0, n_conversations=4)
    assert [len(c.turns) for c in res.conversations] == [turns] * 4
    assert len(res.helper_streams) == 4 * turns
    kept = [t.stream_id for c in res.conversations for t in c.turns]
    # stream-id audit: nothing the reply endpoint sent reaches the attacker
    assert all(s.startswith(VICTIM_PREFIX + "-") for s in kept)
    assert not set(kept) & set(res.helper_streams)
    assert all(h.startswith(HELPER_PREFIX) for h in res.helper_streams)


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------


def test_model_files_round_trip_and_errors(tmp_path):
    o = SecondTokenOracle(1.4e7)
    save_model(o, tmp_path / "o.json")
    assert load_model(tmp_path / "o.json") == o
    d = json.loads(model_to_json(o))
    assert d["version"] == SCHEMA_VERSION and d["kind"] == "oracle"
    with pytest.raises(ConfigError, match="model-not-found"):
        load_model(tmp_path / "none.json")
    with pytest.raises(DataError, match="bad-model-file"):
        model_from_json("{not json")
    with pytest.raises(DataError, match="bad-model-version"):
        model_from_json(json.dumps(d | {"version": 99}))
    with pytest.raises(DataError, match="bad-model-file"):
        model_from_json(json.dumps(d | {"kind": "svm"}))
    with pytest.raises(ConfigError, match="unknown-model"):
        model_to_json(object())
