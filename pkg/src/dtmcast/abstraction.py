"""Group-level abstraction: swipe CDFs over watch progress, preferences, playlists."""

from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyCatalog, InvalidRecord

DEFAULT_BINS = 20


@dataclass(frozen=True)
class WatchRecord:
    user_id: int
    video_id: int
    category: int
    duration: float
    watched: float
    completed: bool

    def __post_init__(self):
        if not self.duration > 0:
            raise InvalidRecord(f"video duration must be > 0, got {self.duration}")
        if not 0 <= self.watched <= self.duration:
            raise InvalidRecord(f"watched {self.watched} outside [0, {self.duration}]")
        if bool(self.completed) != (self.watched == self.duration):
            raise InvalidRecord("completed flag must equal (watched == duration)")

    @classmethod
    def from_watch(cls, user_id, video_id, category, duration, watched):
        return cls(user_id, video_id, category, duration, watched, watched == duration)

    @property
    def fraction(self):
        return self.watched / self.duration


@dataclass
class SwipeCdf:
    """Per-category P(swipe at or before watch fraction x) on x = b / n_bins.

    ``F`` has shape (C, n_bins + 1).  Mass above ``F[:, -1]`` belongs to
    completed views.
    """

    F: np.ndarray
    counts: np.ndarray

    @classmethod
    def empty(cls, n_categories, n_bins=DEFAULT_BINS):
        return cls(np.zeros((n_categories, n_bins + 1)), np.zeros(n_categories))

    @property
    def n_bins(self):
        return self.F.shape[1] - 1

    @property
    def n_categories(self):
        return self.F.shape[0]

    @property
    def grid(self):
        return np.arange(self.n_bins + 1) / self.n_bins

    def completion_mass(self, c):
        return 1.0 - self.F[c, -1]

    def copy(self):
        return SwipeCdf(self.F.copy(), self.counts.copy())


def empirical_swipe_cdf(fractions, completed, n_bins=DEFAULT_BINS):
    """CDF over watch fractions; completed views are right-censored at 1."""
    fr = np.asarray(fractions, dtype=np.float64)
    done = np.asarray(completed, dtype=bool)
    n = fr.size
    if n == 0:
        return np.zeros(n_bins + 1)
    swiped = np.sort(fr[~done]) * n_bins
    # 1e-9 absorbs rounding of fractions that sit exactly on a bin edge
    below = np.searchsorted(swiped, np.arange(n_bins + 1) + 1e-9, side="right")
    return below / n


def update_swipe_cdf(records, prior, decay=0.7):
    """Blend this interval's empirical CDF into ``prior`` per category.

    Categories without new records keep the prior.  A category the prior has
    never observed takes the new empirical CDF as is.
    """
    if not 0 <= decay < 1:
        raise ValueError("decay must be in [0, 1)")
    out = prior.copy()
    by_cat = {}
    for r in records:
        if not 0 <= r.watched <= r.duration:
            raise InvalidRecord(f"watched {r.watched} outside [0, {r.duration}]")
        if not 0 <= r.category < prior.n_categories:
            raise InvalidRecord(f"unknown category {r.category}")
        by_cat.setdefault(r.category, []).append(r)
    for c, recs in by_cat.items():
        new = empirical_swipe_cdf(
            [r.fraction for r in recs], [r.completed for r in recs], prior.n_bins
        )
        if prior.counts[c] > 0:
            out.F[c] = decay * prior.F[c] + (1.0 - decay) * new
        else:
            out.F[c] = new
        out.counts[c] = prior.counts[c] + len(recs)
    return out


def pool_cdfs(cdfs):
    """Count-weighted average of several CDFs (still monotone per category)."""
    counts = np.array([c.counts for c in cdfs])
    F = np.array([c.F for c in cdfs])
    total = counts.sum(axis=0)
    w = np.divide(counts, total, out=np.zeros_like(counts), where=total > 0)
    return SwipeCdf(np.einsum("uc,ucb->cb", w, F), total)


def expected_engagement(F_row, duration):
    """E[watch seconds] = D * sum_b (1 - F(x_b)) / B over the left bin edges."""
    F_row = np.asarray(F_row, dtype=np.float64)
    n_bins = F_row.size - 1
    survival = 1.0 - F_row[:n_bins]
    return float(duration * np.clip(survival, 0.0, 1.0).sum() / n_bins)


def update_preference(pref, record, beta=0.1):
    """Move the record's category toward its watch fraction, decay the rest, renormalise."""
    if not 0 < beta < 1:
        raise ValueError("beta must be in (0, 1)")
    p = (1.0 - beta) * np.asarray(pref, dtype=np.float64)
    p[record.category] += beta * record.fraction
    return p / p.sum()


def group_preference(prefs):
    p = np.mean(np.asarray(prefs, dtype=np.float64), axis=0)
    return p / p.sum()


@dataclass
class Catalog:
    video_ids: np.ndarray
    categories: np.ndarray
    durations: np.ndarray
    popularity: np.ndarray

    def __len__(self):
        return len(self.video_ids)

    def index_of(self, video_id):
        return int(np.searchsorted(self.video_ids, video_id))


@dataclass
class Playlist:
    video_ids: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return len(self.video_ids)


def recommend(group_pref, catalog, alpha=0.5, n=50):
    """Top-``n`` videos by alpha * normalised popularity + (1 - alpha) * group preference.

    Ties go to the lower video id.
    """
    if len(catalog) == 0:
        raise EmptyCatalog("catalog is empty")
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must be in [0, 1]")
    if n < 1:
        raise ValueError("n must be >= 1")
    pop = np.asarray(catalog.popularity, dtype=np.float64)
    span = pop.max() - pop.min()
    pop_norm = (pop - pop.min()) / span if span > 0 else np.zeros_like(pop)
    pref = np.asarray(group_pref, dtype=np.float64)
    score = alpha * pop_norm + (1.0 - alpha) * pref[catalog.categories]
    order = np.lexsort((catalog.video_ids, -score))[:n]
    return Playlist(catalog.video_ids[order], score[order])
