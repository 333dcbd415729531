import math

import numpy as np
import pytest

from dtmcast.abstraction import Catalog
from dtmcast.config import ScenarioConfig, parse_config
from dtmcast.exceptions import InvalidRecord
from dtmcast.sim import (
    UserAgent,
    World,
    estimate_swipe_rates,
    make_catalog,
    meter_actual,
    play_group,
    read_trace,
    run_scenario,
    sample_watch,
    step_mobility,
    transcoded_with_lookahead,
)
from dtmcast.udt_store import SNR


def agent(rates=(0.1,), pos=(0.0, 0.0), wp=(30.0, 40.0), speed=1.0):
    return UserAgent(0, np.array(pos, dtype=float), np.array(wp, dtype=float), speed,
                     np.array(rates, dtype=float), np.ones(len(rates)) / len(rates))


def small(**kv):
    opts = {"n_users": 6, "n_intervals": 4, "ddqn.k_max": 3, **kv}
    return parse_config("".join(f"{k}={v}\n" for k, v in opts.items()))


def test_mobility_examples():
    rng = np.random.default_rng(0)
    a = agent()
    step_mobility(a, 0.0, 100.0, rng)
    assert a.position.tolist() == [0.0, 0.0]
    step_mobility(a, 10.0, 100.0, rng)
    assert np.allclose(a.position, [6.0, 8.0])


def test_mobility_stays_in_area():
    rng = np.random.default_rng(1)
    a = agent(wp=(5.0, 5.0))
    lo, hi = np.inf, -np.inf
    for _ in range(100_000):
        step_mobility(a, 1.0, 50.0, rng, (0.5, 2.0))
        lo, hi = min(lo, a.position.min()), max(hi, a.position.max())
        assert 0.5 <= a.speed <= 2.0
    assert lo >= 0.0 and hi <= 50.0


def test_sample_watch():
    rng = np.random.default_rng(2)
    never = agent(rates=(0.0,))
    assert all(sample_watch(never, 1, 0, 12.0, rng).completed for _ in range(100))
    a = agent(rates=(0.1,))
    recs = [sample_watch(a, 1, 0, 15.0, rng) for _ in range(10_000)]
    assert all(0 <= r.watched <= r.duration for r in recs)
    done = np.mean([r.completed for r in recs])
    assert done == pytest.approx(math.exp(-1.5), abs=0.02)


def test_lookahead_walk():
    assert transcoded_with_lookahead(4.0, 15.0, 2.0) == 6.0
    assert transcoded_with_lookahead(14.5, 15.0, 2.0) == 15.0


def test_meter_actual():
    act = meter_actual([(4.0, 15.0)], 1e6, True, 2.0, 50.0, 2.0, 300.0)
    assert act.cycles == 50.0 * 1e6 * 6.0
    assert act.bits == 4e6 and act.bits == act.eta * act.hz_s
    half = meter_actual([(4.0, 15.0)], 1e6, True, 4.0, 50.0, 2.0, 300.0)
    assert half.hz_s == act.hz_s / 2
    assert meter_actual([(4.0, 15.0)], 1e6, False, 2.0, 50.0, 2.0, 300.0).cycles == 0.0


def test_play_group_never_swipe():
    cat = Catalog(np.arange(30), np.zeros(30, dtype=int), np.full(30, 40.0), np.ones(30))
    members = [agent(rates=(0.0,)), agent(rates=(0.0,))]
    plays, events = play_group(members, cat.video_ids, cat, 0.0, 300.0, np.random.default_rng(0))
    assert sum(p for p, _ in plays) == 300.0
    assert [p for p, _ in plays][-1] == 20.0  # 7 full videos, then 20 s of the 8th
    assert len(events) == 2 * 7


def test_play_group_lasts_until_last_swipe():
    cat = Catalog(np.arange(200), np.zeros(200, dtype=int), np.full(200, 30.0), np.ones(200))
    members = [agent(rates=(0.2,)), agent(rates=(0.05,))]
    rng = np.random.default_rng(4)
    plays, events = play_group(members, cat.video_ids, cat, 0.0, 300.0, rng)
    t_events = [t for t, _ in events]
    assert sum(p for p, _ in plays) == pytest.approx(300.0)
    assert max(t_events) <= 300.0


def test_trace_round_trip(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("user_id,video_id,category,duration_s,watched_s\n0,1,0,10.0,4.0\n1,2,1,8.5,8.5\n")
    recs = read_trace(p)
    assert [r.completed for r in recs] == [False, True]
    assert estimate_swipe_rates(recs, 2).tolist() == [0.25, 0.0]
    p.write_text("user,video\n")
    with pytest.raises(InvalidRecord):
        read_trace(p)
    p.write_text("user_id,video_id,category,duration_s,watched_s\n0,1,0,10.0,12.0\n")
    with pytest.raises(InvalidRecord, match=":2"):
        read_trace(p)


def test_swipe_rate_mle_recovers_truth():
    rng = np.random.default_rng(0)
    a = agent(rates=(0.04, 0.15))
    recs = [sample_watch(a, i, i % 2, float(rng.uniform(10, 30)), rng) for i in range(40_000)]
    est = estimate_swipe_rates(recs, 2)
    assert est == pytest.approx([0.04, 0.15], rel=0.05)


def test_make_catalog():
    cat = make_catalog(50, 4, (10.0, 30.0), np.random.default_rng(0))
    assert len(cat) == 50 and cat.durations.min() >= 10.0 and set(cat.categories) <= set(range(4))


def test_zero_users_gives_empty_reports():
    world, reports = run_scenario(small(n_users=0))
    assert len(reports) == 4 and all(r.rows == [] for r in reports)


def test_user_with_empty_track_is_held_out():
    cfg = small()
    world = World(cfg)
    world.fit_encoder(world.warmup())
    world.store[2].tracks[SNR].clear()
    rep = world.run_interval(0)
    assert rep.held_out == [2]
    assert sum(r.n_members for r in rep.rows) == 5


def test_conservation_and_partition():
    world, reports = run_scenario(small())
    for rep in reports:
        assert sum(r.n_members for r in rep.rows) == 6
        assert len(rep.rows) == rep.K
        for r in rep.rows:
            assert r.predicted_radio_hz >= 0 and r.actual_compute_cps >= 0


def test_same_seed_same_report_other_seed_differs():
    a = run_scenario(small())[1]
    b = run_scenario(small())[1]
    assert [x.csv_lines() for x in a] == [x.csv_lines() for x in b]
    w1 = World(small(seed=1))
    w2 = World(small(seed=2))
    assert [u.shadow_db for u in w1.users] != [u.shadow_db for u in w2.users]


def test_default_config_runs_trajectory_channel():
    assert ScenarioConfig().predictor.channel == "trajectory"


def test_recommend_skips_seen_videos():
    w = World(small(**{"sim.catalog_size": 30, "abstraction.playlist": 10}), train_ddqn=False)
    pref = np.ones(4) / 4
    first = w.recommend([0, 1], pref).video_ids
    w.seen[1] |= {int(v) for v in first[:5]}
    again = w.recommend([0, 1], pref).video_ids
    assert not set(again) & set(first[:5])
    assert list(w.recommend([2], pref).video_ids) == list(first)
    w.seen[0] = set(range(1000))
    assert len(w.recommend([0], pref)) == 10  # everything seen: full catalog again
    off = World(small(**{"sim.catalog_size": 30, "abstraction.playlist": 10,
                         "abstraction.exclude_seen": "false"}), train_ddqn=False)
    off.seen[0] = set(range(1000))
    assert list(off.recommend([0], pref).video_ids) == list(first)
