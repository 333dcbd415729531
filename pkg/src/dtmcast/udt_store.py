"""User digital twins: multi-rate telemetry tracks, uniform-grid windows, snapshots.

Each twin keeps one bounded ring buffer per attribute track.  Track order is
fixed: channel SNR, location x, location y, one watch-fraction track per
video category, then one preference track per category (3 + 2*C tracks).
"""

import enum
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import (
    EmptyTrack,
    FormatVersionMismatch,
    IoFailure,
    NonMonotonicTimestamp,
    UnknownAttribute,
)

SNAPSHOT_MAGIC = "UDTSTORE"
SNAPSHOT_VERSION = "v1"
DEFAULT_CAPACITY = 256


class AttributeKind(enum.Enum):
    CHANNEL_SNR = "snr"
    LOCATION_X = "x"
    LOCATION_Y = "y"
    WATCH_FRACTION = "watch"
    PREFERENCE = "pref"

    @property
    def per_category(self):
        return self in (AttributeKind.WATCH_FRACTION, AttributeKind.PREFERENCE)


class Track(NamedTuple):
    """Key of one attribute track; ``category`` is set only for per-category kinds."""

    kind: AttributeKind
    category: int = None

    def __str__(self):
        if self.category is None:
            return self.kind.value
        return f"{self.kind.value}[{self.category}]"

    @classmethod
    def parse(cls, text):
        if "[" in text:
            name, rest = text.split("[", 1)
            return cls(AttributeKind(name), int(rest.rstrip("]")))
        return cls(AttributeKind(text))


SNR = Track(AttributeKind.CHANNEL_SNR)
LOC_X = Track(AttributeKind.LOCATION_X)
LOC_Y = Track(AttributeKind.LOCATION_Y)


def watch_track(c):
    return Track(AttributeKind.WATCH_FRACTION, c)


def pref_track(c):
    return Track(AttributeKind.PREFERENCE, c)


def canonical_tracks(n_categories):
    """Canonical row order of the status matrix."""
    return (
        [SNR, LOC_X, LOC_Y]
        + [watch_track(c) for c in range(n_categories)]
        + [pref_track(c) for c in range(n_categories)]
    )


class Sample(NamedTuple):
    t: float
    value: float


@dataclass(frozen=True)
class CollectionSchedule:
    """Collection period (s) per attribute group.

    Behavioural tracks (watch fraction, preference) are event driven in the
    simulator; ``behavior_s`` is their nominal period and only matters for the
    ordering check.
    """

    snr_s: float = 1.0
    location_s: float = 5.0
    behavior_s: float = 15.0

    def __post_init__(self):
        for name in ("snr_s", "location_s", "behavior_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not self.snr_s <= self.location_s <= self.behavior_s:
            raise ValueError("collection periods must satisfy snr <= location <= behavior")

    def period(self, kind):
        if kind is AttributeKind.CHANNEL_SNR:
            return self.snr_s
        if kind in (AttributeKind.LOCATION_X, AttributeKind.LOCATION_Y):
            return self.location_s
        return self.behavior_s


@dataclass(frozen=True)
class NormalizationBounds:
    """Scenario-level min-max bounds used to scale status-matrix rows."""

    snr_db: tuple = (40.0, 80.0)
    x_m: tuple = (0.0, 2000.0)
    y_m: tuple = (0.0, 2000.0)

    def for_track(self, track):
        kind = track.kind
        if kind is AttributeKind.CHANNEL_SNR:
            return self.snr_db
        if kind is AttributeKind.LOCATION_X:
            return self.x_m
        if kind is AttributeKind.LOCATION_Y:
            return self.y_m
        return (0.0, 1.0)


class UserDigitalTwin:
    """Bounded, multi-rate status history of one user."""

    def __init__(self, user_id, n_categories, schedule=None, capacity=DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be > 0")
        if n_categories < 1:
            raise ValueError("n_categories must be >= 1")
        self.user_id = int(user_id)
        self.n_categories = int(n_categories)
        self.schedule = schedule if schedule is not None else CollectionSchedule()
        self.capacity = int(capacity)
        self.tracks = {tr: deque(maxlen=self.capacity) for tr in canonical_tracks(n_categories)}
        self.lock = threading.Lock()

    def _track(self, track):
        if isinstance(track, str):
            try:
                track = Track.parse(track)
            except (ValueError, KeyError) as exc:
                raise UnknownAttribute(track) from exc
        try:
            return self.tracks[track]
        except KeyError:
            raise UnknownAttribute(str(track)) from None

    def ingest(self, track, sample):
        """Append ``sample`` to ``track``; the oldest sample is evicted at capacity."""
        buf = self._track(track)
        t, value = float(sample[0]), float(sample[1])
        if t < 0 or not np.isfinite(t):
            raise ValueError(f"sample time must be finite and non-negative, got {t}")
        with self.lock:
            if buf and t <= buf[-1][0]:
                raise NonMonotonicTimestamp(
                    f"user {self.user_id} track {track}: t={t} <= last t={buf[-1][0]}"
                )
            buf.append(Sample(t, value))
        return self

    def ingest_preference(self, t, weights):
        """Ingest a whole preference vector at one timestamp; it must be a simplex."""
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (self.n_categories,):
            raise ValueError(f"preference must have {self.n_categories} entries")
        if np.any(w < 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("preference vector must lie on the probability simplex")
        bufs = [self.tracks[pref_track(c)] for c in range(self.n_categories)]
        with self.lock:
            for buf in bufs:
                if buf and t <= buf[-1][0]:
                    raise NonMonotonicTimestamp(f"user {self.user_id} preference: t={t}")
            for buf, v in zip(bufs, w):
                buf.append(Sample(float(t), float(v)))
        return self

    def samples(self, track):
        return list(self._track(track))

    def last(self, track, n=1):
        """Values of the ``n`` most recent samples of ``track``."""
        buf = self._track(track)
        return [s.value for s in list(buf)[-n:]]

    def since(self, track, t_start, t_end=np.inf):
        """Samples with t_start < t <= t_end."""
        return [s for s in self._track(track) if t_start < s.t <= t_end]

    def __eq__(self, other):
        if not isinstance(other, UserDigitalTwin):
            return NotImplemented
        return (
            self.user_id == other.user_id
            and self.n_categories == other.n_categories
            and self.schedule == other.schedule
            and self.capacity == other.capacity
            and all(list(self.tracks[k]) == list(other.tracks[k]) for k in self.tracks)
        )

    def __repr__(self):
        sizes = ", ".join(f"{k}:{len(v)}" for k, v in self.tracks.items())
        return f"UserDigitalTwin(user_id={self.user_id}, {sizes})"


def ingest_sample(twin, track, sample):
    return twin.ingest(track, sample)


def window(twin, track, t_end, horizon, n_points):
    """Zero-order-hold resampling of one track onto a uniform grid.

    Grid times are ``t_end - horizon + i * horizon / (n_points - 1)``.  Each
    value is the latest sample at or before the grid time; grid times before
    the first sample take the first sample's value.
    """
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    buf = twin._track(track)
    if not buf:
        raise EmptyTrack(f"user {twin.user_id}: track {track} is empty")
    ts = np.fromiter((s.t for s in buf), dtype=np.float64, count=len(buf))
    vs = np.fromiter((s.value for s in buf), dtype=np.float64, count=len(buf))
    grid = t_end - horizon + np.arange(n_points) * (horizon / (n_points - 1))
    idx = np.searchsorted(ts, grid, side="right") - 1
    return vs[np.maximum(idx, 0)]


def status_matrix(twin, t_end, horizon, n_points, bounds=None):
    """(3 + 2C) x n_points matrix of min-max normalised, clamped windows."""
    bounds = bounds if bounds is not None else NormalizationBounds()
    tracks = canonical_tracks(twin.n_categories)
    out = np.empty((len(tracks), n_points))
    for i, tr in enumerate(tracks):
        lo, hi = bounds.for_track(tr)
        row = window(twin, tr, t_end, horizon, n_points)
        out[i] = np.clip((row - lo) / (hi - lo), 0.0, 1.0)
    return out


@dataclass
class UDTStore:
    """All twins of a scenario, keyed by user id."""

    n_categories: int
    twins: dict = field(default_factory=dict)

    def __post_init__(self):
        self._lock = threading.Lock()

    def add(self, user_id, schedule=None, capacity=DEFAULT_CAPACITY):
        with self._lock:
            if user_id in self.twins:
                raise ValueError(f"user {user_id} already registered")
            twin = UserDigitalTwin(user_id, self.n_categories, schedule, capacity)
            self.twins[user_id] = twin
        return twin

    def __getitem__(self, user_id):
        return self.twins[user_id]

    def __contains__(self, user_id):
        return user_id in self.twins

    def __len__(self):
        return len(self.twins)

    def __iter__(self):
        return iter(sorted(self.twins))

    def __eq__(self, other):
        if not isinstance(other, UDTStore):
            return NotImplemented
        return self.n_categories == other.n_categories and self.twins == other.twins


def _fmt(x):
    return format(x, ".17g")


def snapshot(store, path):
    """Write ``store`` as text; reals use 17 significant digits (exact round-trip)."""
    lines = [f"{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION} {len(store)} {store.n_categories}"]
    for uid in store:
        twin = store[uid]
        sch = twin.schedule
        lines.append(
            f"USER {uid} {twin.capacity} {_fmt(sch.snr_s)} {_fmt(sch.location_s)} {_fmt(sch.behavior_s)}"
        )
        for tr in canonical_tracks(store.n_categories):
            buf = twin.tracks[tr]
            pairs = " ".join(f"{_fmt(s.t)} {_fmt(s.value)}" for s in buf)
            lines.append(f"{tr} {len(buf)} {pairs}".rstrip())
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write snapshot {path}: {exc}") from exc
    return path


def restore(path):
    try:
        with open(path, encoding="ascii") as fh:
            lines = fh.read().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise IoFailure(f"cannot read snapshot {path}: {exc}") from exc
    if not lines:
        raise FormatVersionMismatch(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != SNAPSHOT_MAGIC or head[1] != SNAPSHOT_VERSION:
        raise FormatVersionMismatch(f"{path}: bad header {lines[0]!r}")
    n_users, n_cat = int(head[2]), int(head[3])
    store = UDTStore(n_cat)
    tracks = canonical_tracks(n_cat)
    pos = 1
    try:
        for _ in range(n_users):
            tok = lines[pos].split()
            if tok[0] != "USER":
                raise FormatVersionMismatch(f"{path}:{pos + 1}: expected USER line")
            sch = CollectionSchedule(float(tok[3]), float(tok[4]), float(tok[5]))
            twin = store.add(int(tok[1]), sch, int(tok[2]))
            pos += 1
            for tr in tracks:
                tok = lines[pos].split()
                if tok[0] != str(tr):
                    raise FormatVersionMismatch(f"{path}:{pos + 1}: expected track {tr}")
                n = int(tok[1])
                vals = [float(v) for v in tok[2:]]
                if len(vals) != 2 * n:
                    raise FormatVersionMismatch(f"{path}:{pos + 1}: truncated track")
                twin.tracks[tr].extend(Sample(vals[2 * i], vals[2 * i + 1]) for i in range(n))
                pos += 1
    except (IndexError, ValueError) as exc:
        if isinstance(exc, FormatVersionMismatch):
            raise
        raise FormatVersionMismatch(f"{path}: malformed body near line {pos + 1}") from exc
    return store
