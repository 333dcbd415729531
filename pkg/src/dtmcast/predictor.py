"""Per-group radio bandwidth and transcoding compute demand for one interval."""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .abstraction import expected_engagement
from .exceptions import EmptyGroup, EmptyPlaylist, UnknownRepresentation

CHANNELS = ("persistence", "trajectory")

# 360p .. 4K, bit/s
DEFAULT_LADDER = ((1.0e6, "360p"), (2.5e6, "480p"), (5.0e6, "720p"), (8.0e6, "1080p"),
                  (16.0e6, "1440p"), (40.0e6, "2160p"))


@dataclass(frozen=True)
class BitrateLadder:
    bitrates: tuple
    labels: tuple = None

    def __post_init__(self):
        b = tuple(float(x) for x in self.bitrates)
        if len(b) < 1:
            raise ValueError("ladder needs at least one representation")
        if any(x <= 0 for x in b) or any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise ValueError("ladder bitrates must be positive and strictly increasing")
        object.__setattr__(self, "bitrates", b)
        if self.labels is None:
            object.__setattr__(self, "labels", tuple(f"r{i + 1}" for i in range(len(b))))
        elif len(self.labels) != len(b):
            raise ValueError("one label per bitrate")

    @classmethod
    def default(cls):
        return cls(*zip(*DEFAULT_LADDER))

    def __len__(self):
        return len(self.bitrates)

    @property
    def highest(self):
        return len(self.bitrates) - 1

    def bitrate(self, rep):
        if not 0 <= rep < len(self.bitrates):
            raise UnknownRepresentation(f"representation {rep} not in ladder of {len(self)}")
        return self.bitrates[rep]


@dataclass
class ResourceDemand:
    group_id: int
    interval_index: int
    radio_hz: float
    compute_cps: float


@dataclass
class PlannedPlaylist:
    """Prefix of a recommendation ranking expected to fill one interval.

    ``expected`` is each video's expected engagement; ``planned`` is the same
    with the last video cut at the interval end.
    """

    video_ids: np.ndarray
    durations: np.ndarray
    expected: np.ndarray
    planned: np.ndarray
    undersupplied: bool


def spectral_efficiency(snr_db):
    """Shannon efficiency log2(1 + SNR) in bit/s/Hz."""
    return np.log2(1.0 + 10.0 ** (np.asarray(snr_db, dtype=np.float64) / 10.0))


def group_efficiency(member_snr_db):
    """Multicast efficiency: the worst member sets the rate."""
    snr = np.asarray(member_snr_db, dtype=np.float64)
    if snr.size == 0:
        raise EmptyGroup("group has no members")
    return float(spectral_efficiency(snr.min()))


def channel_estimate(snr_history, window=8):
    """Persistence forecast: mean of the last ``window`` SNR samples (dB)."""
    h = np.asarray(snr_history, dtype=np.float64)
    if h.size == 0:
        raise EmptyGroup("no SNR samples")
    return float(h[-window:].mean())


def select_representation(ladder, eta, budget_hz):
    """Highest representation with bitrate <= eta * budget; else the lowest."""
    if not budget_hz > 0:
        raise ValueError("budget_hz must be > 0")
    capacity = eta * budget_hz
    rep = 0
    for i, b in enumerate(ladder.bitrates):
        if b <= capacity:
            rep = i
    return rep


def build_playlist_for_interval(playlist, cdf, catalog, interval_s):
    """Walk the ranking until cumulative expected engagement reaches ``interval_s``."""
    if len(playlist) == 0:
        raise EmptyPlaylist("recommendation list is empty")
    ids, durs, exp = [], [], []
    total = 0.0
    for vid in playlist.video_ids:
        i = catalog.index_of(vid)
        d = float(catalog.durations[i])
        e = expected_engagement(cdf.F[catalog.categories[i]], d)
        ids.append(int(vid))
        durs.append(d)
        exp.append(e)
        total += e
        if total >= interval_s:
            break
    exp = np.array(exp)
    before = np.concatenate([[0.0], np.cumsum(exp)[:-1]])
    planned = np.clip(np.minimum(exp, interval_s - before), 0.0, None)
    return PlannedPlaylist(np.array(ids), np.array(durs), exp, planned, bool(total < interval_s))


def predict_radio(engagements, bitrate, eta, interval_s):
    """Average bandwidth (Hz) to carry ``bitrate`` for the expected watch seconds."""
    if not eta > 0:
        raise ValueError("eta must be > 0")
    bits = bitrate * float(np.sum(engagements))
    return bits / (interval_s * eta)


def transcoded_seconds(engagement, duration, segment_s):
    """Seconds of video transcoded when whole segments cover the expected watch time."""
    return min(math.ceil(engagement / segment_s - 1e-9) * segment_s, duration)


def predict_compute(engagements, durations, ladder, rep, kappa, segment_s, interval_s):
    """Transcoding rate (cycles/s); zero when the stored top representation is served."""
    if not kappa > 0 or not segment_s > 0:
        raise ValueError("kappa and segment_s must be > 0")
    bitrate = ladder.bitrate(rep)
    if rep == ladder.highest:
        return 0.0
    secs = sum(transcoded_seconds(e, d, segment_s) for e, d in zip(engagements, durations))
    return kappa * bitrate * secs / interval_s


def accuracy(predicted, actual):
    """1 - relative error, clamped to [0, 1]; a zero actual scores 1 only for an exact zero."""
    if actual == 0:
        return 1.0 if predicted == 0 else 0.0
    return max(0.0, 1.0 - abs(predicted - actual) / abs(actual))


@dataclass
class GroupForecast:
    """Everything the predictor decided for one group and interval."""

    demand: ResourceDemand
    eta: float
    representation: int
    plan: PlannedPlaylist


class DemandPredictor(BaseEstimator):
    """Maps abstracted group information to a ``ResourceDemand``.

    Stateless apart from its parameters; ``fit`` only validates them.
    """

    def __init__(self, ladder=None, kappa=50.0, segment_s=2.0, budget_hz=2e6, interval_s=300.0,
                 snr_window=8, channel="persistence", channel_model=None):
        self.ladder = ladder
        self.kappa = kappa
        self.segment_s = segment_s
        self.budget_hz = budget_hz
        self.interval_s = interval_s
        self.snr_window = snr_window
        self.channel = channel
        self.channel_model = channel_model

    def fit(self, X=None, y=None):
        self.ladder_ = self.ladder if self.ladder is not None else BitrateLadder.default()
        for name in ("kappa", "segment_s", "budget_hz", "interval_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.channel not in CHANNELS:
            raise ValueError(f"channel must be one of {CHANNELS}")
        if self.channel == "trajectory" and self.channel_model is None:
            raise ValueError("trajectory channel needs a channel_model")
        return self

    def member_snr(self, snr_history, locations=None, now=None):
        """Forecast SNR (dB) of one member for the coming interval.

        ``locations`` is ``(times, xy)`` and is only used by the trajectory channel.
        """
        if self.channel == "persistence" or locations is None:
            return channel_estimate(snr_history, self.snr_window)
        t, xy = locations
        now = float(np.asarray(t)[-1]) if now is None else now
        return self.channel_model.forecast_snr(np.asarray(snr_history)[-self.snr_window:], t, xy,
                                               now, self.interval_s)

    def forecast(self, group_id, interval_index, member_snr_histories, cdf, playlist, catalog,
                 member_locations=None, now=None):
        if not hasattr(self, "ladder_"):
            self.fit()
        locs = member_locations or [None] * len(member_snr_histories)
        snrs = [self.member_snr(h, loc, now) for h, loc in zip(member_snr_histories, locs)]
        eta = group_efficiency(snrs)
        rep = select_representation(self.ladder_, eta, self.budget_hz)
        plan = build_playlist_for_interval(playlist, cdf, catalog, self.interval_s)
        radio = predict_radio(plan.planned, self.ladder_.bitrate(rep), eta, self.interval_s)
        compute = predict_compute(plan.planned, plan.durations, self.ladder_, rep, self.kappa,
                                  self.segment_s, self.interval_s)
        return GroupForecast(ResourceDemand(group_id, interval_index, radio, compute), eta, rep, plan)

    def predict(self, groups):
        """``groups``: iterable of dicts with the keyword arguments of ``forecast``."""
        return [self.forecast(**g).demand for g in groups]
