import csv
import json
import subprocess
import sys

import pytest

from timinglab.harness.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 and out.strip().startswith("{") else None), err


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["--out", str(out), "sim", "run", "--n-train", "30", "--n-test", "20", "--K", "30"]) == 0
    return out


def test_sim_run_writes_artifacts(sim_dir):
    rows = list(csv.DictReader(open(sim_dir / "metrics.csv")))
    acc = [float(r["value"]) for r in rows if r["metric"] == "accuracy"]
    assert acc and acc[0] >= 0.9


def test_fit_infer_sweep_report(capsys, sim_dir, tmp_path):
    traces = str(sim_dir / "traces" / "0.jsonl")
    code, res, _ = run(capsys, "--out", str(tmp_path), "attack", "fit", "--traces", traces, "--K", "30")
    assert code == 0 and res["classes"] == ["easy-sequence", "random-numbers"]
    model = res["path"]
    code, res, _ = run(capsys, "--out", str(tmp_path), "attack", "infer", "--model", model, "--traces", traces)
    assert code == 0 and res["accuracy"] >= 0.9
    code, res, _ = run(capsys, "--out", str(tmp_path), "attack", "sweep-pr", "--model", model, "--traces", traces)
    assert code == 0 and 0.9 <= res["auc"] <= 1.0
    code, res, err = run(capsys, "report", str(tmp_path))
    assert code == 0 and any(f.endswith("pr-0.svg") for f in res["figures"])
    assert "pr_auc" in err


def test_pcap_round_trip_through_cli(capsys, sim_dir, tmp_path):
    traces = str(sim_dir / "traces" / "0.jsonl")
    code, res, _ = run(capsys, "--out", str(tmp_path), "capture", "export-pcap", traces)
    assert code == 0
    n = res["streams"]
    code, res, _ = run(capsys, "--out", str(tmp_path / "back"), "capture", "import-pcap", str(tmp_path / "traces.pcap"),
                       "--filter", "10.0.0.1:443")
    assert code == 0 and res["streams"] == n


def test_config_file_supplies_defaults(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"out": str(tmp_path / "w"), "kind": "secret-number", "seed": 4}))
    code, res, _ = run(capsys, "--config", str(cfg), "workload", "gen")
    assert code == 0 and res["prompts"] == 100 and res["path"].endswith("secret-number-4.json")
    cfg.write_text(json.dumps({"colour": "blue"}))
    assert run(capsys, "--config", str(cfg), "workload", "gen", "--kind", "easy-sequence")[0] == 2
    cfg.write_text("[1, 2]")
    assert run(capsys, "--config", str(cfg), "workload", "gen", "--kind", "easy-sequence")[0] == 2


def test_exit_codes(capsys, tmp_path):
    assert run(capsys, "--out", str(tmp_path), "workload", "gen", "--kind", "nope")[0] == 2
    assert run(capsys, "--config", str(tmp_path / "missing.json"), "report")[0] == 2
    assert run(capsys, "attack", "infer", "--model", str(tmp_path / "m.json"), "--traces", "x")[0] == 2
    assert run(capsys, "--out", str(tmp_path), "attack", "fit", "--traces", str(tmp_path / "none.jsonl"))[0] == 3
    assert run(capsys, "report", str(tmp_path / "empty"))[0] == 3
    (tmp_path / "bad.pcap").write_bytes(b"nope")
    assert run(capsys, "--out", str(tmp_path), "capture", "import-pcap", str(tmp_path / "bad.pcap"), "--filter", "1.2.3.4:5")[0] == 3
    assert run(capsys, "--out", str(tmp_path), "sim", "run", "--scenario", str(tmp_path / "nope.json"))[0] == 2
    with pytest.raises(SystemExit) as exc:
        main(["attack", "nonsense"])
    assert exc.value.code == 2
    capsys.readouterr()


def test_active_attack_commands(capsys):
    code, res, _ = run(capsys, "attack", "extract-secret", "--secret", "527")
    assert code == 0 and res["secret"] == "527" and res["correct"]
    code, res, _ = run(capsys, "attack", "boost", "--n", "10", "--suffixes", "6")
    assert code == 0 and res["recovery"] >= 0.9
    code, res, _ = run(capsys, "attack", "suffix-search", "--rounds", "1", "--keep", "2", "--probes", "8")
    assert code == 0 and res["rephraser_calls"] == 1 and len(res["history"]) == 2
    code, res, _ = run(capsys, "attack", "difficulty", "--prompt", "5 6 7", "--y", "8")
    assert code == 0 and -1 <= res["difficulty"] <= 1
    code, res, _ = run(capsys, "attack", "difficulty", "--budget", "20")
    assert code == 0 and res["rate_after"] >= res["rate_before"]


def test_defend_commands(capsys, tmp_path):
    code, res, _ = run(capsys, "--out", str(tmp_path), "defend", "sweep")
    assert code == 0 and [p["interval_ms"] for p in res["points"]] == [10, 20, 40, 80]
    assert (tmp_path / "tradeoff.svg").exists()
    code, res, _ = run(capsys, "--out", str(tmp_path), "defend", "pace", "--interval", "30")
    assert code == 0 and res["n_tokens"] > 0
    code, res, _ = run(capsys, "report", str(tmp_path))
    assert code == 0 and any(f.endswith("tradeoff.svg") for f in res["figures"])


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "timinglab", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "sim" in r.stdout
