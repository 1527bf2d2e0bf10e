import csv

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from timinglab.defense import (
    PAD,
    SWEEP_COLUMNS,
    DefensePolicy,
    evaluate_defense,
    overhead,
    pace,
    schedule,
    tradeoff_sweep,
    write_sweep_csv,
    write_sweep_svg,
)
from timinglab.errors import ConfigError, DataError
from timinglab.harness.experiments import indistinguishable
from timinglab.specsim import ACCEPTED, NS_PER_MS, GenEvent
from timinglab.wirechan import FrameSpec

MS = NS_PER_MS
SPEC = FrameSpec()


def ev(t_ms, tok="ab"):
    return GenEvent(tok, int(t_ms * MS), 0, ACCEPTED)


events_st = st.lists(st.integers(0, 300), min_size=1, max_size=40).map(
    lambda ts: [ev(t, "x" * (1 + t % 5)) for t in sorted(ts)]
)


def test_hand_walk_three_tokens():
    evs = [ev(0), ev(30), ev(60)]
    pol = DefensePolicy(10.0)
    slots, total = schedule(evs, pol)
    assert slots.tolist() == [0, 3, 6] and total == 7
    r = overhead([evs], pol)
    assert r.n_pads == 4
    assert r.bandwidth_overhead == pytest.approx(4 / 3)
    pk = pace(evs, pol, SPEC)
    assert [p.ts_ns for p in pk] == [j * 10 * MS for j in range(7)]
    assert [p.tokens[0] for p in pk] == ["ab", PAD, PAD, "ab", PAD, PAD, "ab"]


@given(events_st, st.sampled_from([5.0, 10.0, 20.0, 40.0]))
def test_output_is_periodic_fixed_size_and_conserves_tokens(evs, interval):
    pol = DefensePolicy(interval)
    pk = pace(evs, pol, SPEC)
    assert np.all(np.diff([p.ts_ns for p in pk]) == pol.interval_ns)
    assert len({p.size_bytes for p in pk}) == 1
    assert [p.tokens[0] for p in pk if p.tokens[0] != PAD] == [e.token for e in evs]
    # no token leaves before it exists, and every slot carries at most one
    slots, _ = schedule(evs, pol)
    assert np.all(slots * pol.interval_ns >= [e.t_emit for e in evs])
    assert len(set(slots.tolist())) == len(evs)


@given(events_st, events_st)
def test_fixed_horizon_hides_everything(a, b):
    pol = DefensePolicy(10.0, flush_at_end=False, horizon_slots=80)
    assume(schedule(a, pol)[0][-1] < 80 and schedule(b, pol)[0][-1] < 80)
    assert indistinguishable(a, b, pol)


def test_same_count_ready_tokens_are_indistinguishable():
    # any two generations that keep the queue non-empty look the same
    a = [ev(0)] * 10
    b = [ev(i * 0.5) for i in range(10)]
    assert indistinguishable(a, b, DefensePolicy(20.0))
    assert not indistinguishable(a, [ev(i * 50) for i in range(10)], DefensePolicy(20.0))


def test_zero_tokens_zero_packets():
    assert pace([], DefensePolicy(10.0), SPEC) == []
    assert overhead([[]], DefensePolicy(10.0)).n_slots == 0


def test_token_too_large_and_policy_validation():
    with pytest.raises(DataError, match="token-too-large"):
        pace([ev(0, "x" * 40)], DefensePolicy(10.0), SPEC)
    with pytest.raises(ConfigError):
        DefensePolicy(0.0)
    with pytest.raises(ConfigError):
        DefensePolicy(10.0, max_queue=0)
    with pytest.raises(ConfigError):
        DefensePolicy(10.0, flush_at_end=False)
    with pytest.raises(ConfigError):
        DefensePolicy(10.0, pad_packet_size=10).packet_size(SPEC)
    assert DefensePolicy(10.0).packet_size(SPEC) == 40 + 150 + 32
    pol = DefensePolicy(15.0, pad_packet_size=300, max_queue=4)
    assert DefensePolicy.from_dict(pol.to_dict()) == pol
    with pytest.raises(ConfigError):
        DefensePolicy.from_dict({"interval": 3})


def test_sweep_is_monotone_and_written(tmp_path):
    rng = np.random.default_rng(0)
    sets = [[ev(t) for t in np.cumsum(rng.exponential(24, 100))] for _ in range(5)]
    pts = tradeoff_sweep(sets, [80, 10, 40, 20])
    assert [p.interval_ms for p in pts] == [10, 20, 40, 80]
    ov = [p.overhead_pct for p in pts]
    lat = [p.latency_ms_mean for p in pts]
    assert ov == sorted(ov, reverse=True) and lat == sorted(lat)
    write_sweep_csv(pts, tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == SWEEP_COLUMNS and len(rows) == 5
    write_sweep_svg(pts, tmp_path / "s.svg")
    assert (tmp_path / "s.svg").read_text().lstrip().startswith("<?xml")
    with pytest.raises(ConfigError):
        tradeoff_sweep(sets, [])


def test_evaluate_defense_reports_chance_for_constant_predictor():
    train = {"a": [1, 2], "b": [3, 4]}
    test = {"a": list(range(50)), "b": list(range(50))}
    res = evaluate_defense(lambda tr: (lambda xs: ["a"] * len(xs)), train, test)
    assert res.accuracy == 0.5 and res.chance == 0.5 and res.n_trials == 100
    with pytest.raises(DataError, match="class-mismatch"):
        evaluate_defense(lambda tr: None, {"a": []}, test)
