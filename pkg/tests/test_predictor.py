import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dtmcast.abstraction import Catalog, Playlist, SwipeCdf
from dtmcast.channel import BaseStation, ChannelModel, PathLoss, base_station_grid, nearest_bs, path_loss_db, snr_db
from dtmcast.exceptions import EmptyGroup, EmptyPlaylist, UnknownRepresentation
from dtmcast.predictor import (
    BitrateLadder,
    DemandPredictor,
    accuracy,
    build_playlist_for_interval,
    channel_estimate,
    group_efficiency,
    predict_compute,
    predict_radio,
    select_representation,
    spectral_efficiency,
    transcoded_seconds,
)

MBIT = 1e6


def test_spectral_efficiency_examples():
    assert spectral_efficiency(0.0) == 1.0
    assert spectral_efficiency(3.0) == pytest.approx(1.5826, abs=1e-4)
    assert spectral_efficiency(-100.0) < 1e-4
    x = np.linspace(-20, 60, 50)
    assert np.all(np.diff(spectral_efficiency(x)) > 0)


def test_group_efficiency():
    assert group_efficiency([10.0, 0.0]) == 1.0
    assert group_efficiency([3.0]) == pytest.approx(spectral_efficiency(3.0))
    with pytest.raises(EmptyGroup):
        group_efficiency([])


@given(st.lists(st.floats(-30, 80), min_size=1, max_size=10))
def test_worst_member_bound(snrs):
    assert group_efficiency(snrs) <= spectral_efficiency(np.array(snrs)).min() + 1e-12


def test_select_representation():
    ladder = BitrateLadder((1 * MBIT, 2 * MBIT, 4 * MBIT))
    assert select_representation(ladder, 2.0, 1.5e6) == 1
    assert select_representation(ladder, 0.1, 1e6) == 0
    assert select_representation(ladder, 100.0, 1e6) == ladder.highest
    with pytest.raises(ValueError):
        select_representation(ladder, 1.0, 0.0)


def test_ladder_validation():
    with pytest.raises(ValueError):
        BitrateLadder((2.0, 1.0))
    with pytest.raises(UnknownRepresentation):
        BitrateLadder.default().bitrate(99)
    assert len(BitrateLadder.default().labels) == len(BitrateLadder.default())


def flat_catalog(n, D=60.0):
    return Catalog(np.arange(n), np.zeros(n, dtype=int), np.full(n, D), np.ones(n))


def half_swipe_cdf():
    """Flat F = 0.5: expected engagement is exactly D / 2."""
    return SwipeCdf(np.full((1, 21), 0.5), np.array([1.0]))


def test_playlist_examples():
    cat = flat_catalog(50)
    cdf = half_swipe_cdf()
    pl = Playlist(cat.video_ids, np.ones(50))
    plan = build_playlist_for_interval(pl, cdf, cat, 300.0)
    assert len(plan.video_ids) == 10 and not plan.undersupplied
    assert np.allclose(plan.expected, 30.0)
    big = flat_catalog(2, 600.0)
    plan = build_playlist_for_interval(Playlist(big.video_ids, np.ones(2)), SwipeCdf.empty(1),
                                       big, 300.0)
    assert len(plan.video_ids) == 1 and plan.planned[0] == 300.0
    plan = build_playlist_for_interval(Playlist(cat.video_ids[:3], np.ones(3)), cdf, cat, 300.0)
    assert len(plan.video_ids) == 3 and plan.undersupplied
    with pytest.raises(EmptyPlaylist):
        build_playlist_for_interval(Playlist(np.array([]), np.array([])), cdf, cat, 300.0)


def test_predict_radio_examples():
    assert predict_radio([300.0], MBIT, 1.0, 300.0) == pytest.approx(1e6)
    assert predict_radio([0.0, 0.0], MBIT, 1.0, 300.0) == 0.0
    assert predict_radio([100.0], MBIT, 4.0, 300.0) == pytest.approx(
        predict_radio([100.0], MBIT, 2.0, 300.0) / 2)
    with pytest.raises(ValueError):
        predict_radio([1.0], MBIT, 0.0, 300.0)


def test_predict_compute_examples():
    ladder = BitrateLadder((1 * MBIT, 2 * MBIT))
    assert predict_compute([100.0], [200.0], ladder, 1, 50, 2, 300) == 0.0
    assert transcoded_seconds(7.5, 15.0, 2.0) == 8.0
    assert transcoded_seconds(14.5, 15.0, 2.0) == 15.0
    assert transcoded_seconds(4.0, 15.0, 2.0) == 4.0
    assert predict_compute([300.0], [300.0], ladder, 0, 50, 2, 300) == pytest.approx(5e7)
    with pytest.raises(UnknownRepresentation):
        predict_compute([1.0], [2.0], ladder, 5, 50, 2, 300)


@given(st.lists(st.floats(0, 60), min_size=1, max_size=10), st.floats(0.5, 50))
def test_demand_linear_in_bitrate(eng, scale):
    durs = [60.0] * len(eng)
    l1 = BitrateLadder((1 * MBIT, 5 * MBIT))
    l2 = BitrateLadder((scale * MBIT, 5 * scale * MBIT))
    c1 = predict_compute(eng, durs, l1, 0, 50, 2, 300)
    c2 = predict_compute(eng, durs, l2, 0, 50, 2, 300)
    assert c2 == pytest.approx(scale * c1)
    r1 = predict_radio(eng, 1 * MBIT, 2.0, 300)
    assert predict_radio(eng, scale * MBIT, 2.0 * scale, 300) == pytest.approx(r1)


def test_accuracy_examples():
    assert accuracy(95, 100) == pytest.approx(0.95)
    assert accuracy(100, 100) == 1.0
    assert accuracy(250, 100) == 0.0
    assert accuracy(0, 0) == 1.0 and accuracy(1, 0) == 0.0


def test_more_swiping_means_less_demand():
    cat = flat_catalog(5, 20.0)  # too short to fill the interval
    pl = Playlist(cat.video_ids, np.ones(5))
    pred = DemandPredictor(interval_s=300.0, budget_hz=1e5).fit()
    low = SwipeCdf(np.linspace(0, 0.3, 21)[None, :], np.ones(1))
    high = SwipeCdf(np.linspace(0, 0.9, 21)[None, :], np.ones(1))
    a = pred.forecast(0, 0, [[20.0]], low, pl, cat).demand
    b = pred.forecast(0, 0, [[20.0]], high, pl, cat).demand
    assert b.radio_hz < a.radio_hz and b.compute_cps < a.compute_cps


def test_channel_estimate_window():
    assert channel_estimate([0, 0, 10, 20], window=2) == 15.0
    with pytest.raises(EmptyGroup):
        channel_estimate([])


def test_path_loss_and_snr():
    bs = BaseStation(0, (0.0, 0.0), 30.0, -90.0)
    assert snr_db((10.0, 0.0), bs) == pytest.approx(80.0)
    assert snr_db((5.0, 0.0), bs) == pytest.approx(80.0)  # clamped to d0
    assert snr_db((20.0, 0.0), bs) - snr_db((40.0, 0.0), bs) == pytest.approx(
        30 * math.log10(2))
    assert path_loss_db(10.0, PathLoss()) == 40.0


def test_base_station_grid():
    bs = base_station_grid(4, 2000.0, 46.0, -97.0)
    assert [b.position for b in bs] == [(500.0, 500.0), (1500.0, 500.0), (500.0, 1500.0),
                                        (1500.0, 1500.0)]
    assert nearest_bs((1900.0, 100.0), bs) == 1


def test_trajectory_forecast_static_is_persistence():
    model = ChannelModel(tuple(base_station_grid(4, 2000.0, 46.0, -97.0)))
    f = model.forecast_snr([55.0, 57.0], [0.0, 5.0], [[300.0, 300.0], [300.0, 300.0]], 5.0, 300.0)
    assert f == pytest.approx(56.0)


def test_trajectory_forecast_follows_path_loss():
    bs = base_station_grid(1, 2000.0, 46.0, -97.0)
    model = ChannelModel(tuple(bs), shadow_corr_m=1e-9)
    start = np.array([1000.0, 1010.0])
    v = np.array([0.0, 1.0])  # moving away from the station
    t = np.array([0.0, 5.0])
    xy = np.array([start, start + 5 * v])
    now_snr = snr_db(xy[-1], bs[0])
    f = model.forecast_snr([now_snr], t, xy, 5.0, 100.0, n_points=4)
    expect = np.mean([snr_db(xy[-1] + v * tk, bs[0]) for tk in (12.5, 37.5, 62.5, 87.5)])
    assert f == pytest.approx(expect)


def test_predictor_trajectory_needs_model():
    with pytest.raises(ValueError):
        DemandPredictor(channel="trajectory").fit()
    with pytest.raises(ValueError):
        DemandPredictor(channel="oracle").fit()
    assert DemandPredictor().get_params()["channel"] == "persistence"


def test_predict_many_groups():
    cat = flat_catalog(20)
    pl = Playlist(cat.video_ids, np.ones(20))
    pred = DemandPredictor().fit()
    out = pred.predict([dict(group_id=g, interval_index=3, member_snr_histories=[[30.0]],
                             cdf=SwipeCdf.empty(1), playlist=pl, catalog=cat) for g in range(3)])
    assert [d.group_id for d in out] == [0, 1, 2]
    assert all(d.radio_hz > 0 and d.compute_cps >= 0 for d in out)
