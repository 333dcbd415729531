"""Ground-truth simulator and the per-interval prediction loop.

Users roam a square area under random-waypoint mobility, see a log-distance
path-loss channel with spatially correlated log-normal shadowing to their
nearest base station, and swipe videos after exponential watch times.  Each
reservation interval the world regroups users, predicts per-group demand and
then plays the interval out to meter what was actually consumed.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import abstraction as ab
from .encoder import ConvAutoencoder, encode, load_encoder
from .exceptions import EmptyTrack, InvalidRecord
from .grouping import (
    GroupCountAgent,
    cluster_reward,
    cluster_state,
    construct_groups,
    load_qnetwork,
)
from .channel import ChannelModel, PathLoss, base_station_grid, nearest_bs, snr_db
from .predictor import BitrateLadder, DemandPredictor, accuracy, spectral_efficiency
from .udt_store import (
    LOC_X,
    LOC_Y,
    SNR,
    CollectionSchedule,
    NormalizationBounds,
    UDTStore,
    pref_track,
    status_matrix,
    watch_track,
)

INTERVAL_COLUMNS = (
    "interval_index", "group_id", "n_members", "K",
    "predicted_radio_hz", "actual_radio_hz",
    "predicted_compute_cps", "actual_compute_cps",
    "accuracy_radio", "accuracy_compute",
)
CDF_COLUMNS = ("interval_index", "group_id", "category", "bin_x", "F")
TRACE_COLUMNS = ("user_id", "video_id", "category", "duration_s", "watched_s")


@dataclass
class UserAgent:
    user_id: int
    position: np.ndarray
    waypoint: np.ndarray
    speed: float
    swipe_rates: np.ndarray  # 1/s per category; 0 means never swipes
    preference: np.ndarray
    shadow_db: float = 0.0
    bs: int = 0


def step_mobility(agent, dt, area, rng, v_range=(0.5, 2.0)):
    """Random waypoint: advance ``speed * dt`` toward the waypoint; redraw on arrival."""
    if dt <= 0:
        return agent
    delta = agent.waypoint - agent.position
    dist = math.hypot(delta[0], delta[1])
    step = agent.speed * dt
    if step >= dist:
        agent.position = agent.waypoint.copy()
        agent.waypoint = rng.uniform(0.0, area, size=2)
        agent.speed = float(rng.uniform(*v_range))
    else:
        agent.position = agent.position + delta * (step / dist)
    return agent


def sample_watch(agent, video_id, category, duration, rng):
    """Exponential swipe time per category; watches that reach the end complete."""
    rate = agent.swipe_rates[category]
    t = rng.exponential(1.0 / rate) if rate > 0 else math.inf
    watched = min(t, duration)
    return ab.WatchRecord(agent.user_id, int(video_id), int(category), float(duration),
                          float(watched), t >= duration)


@dataclass
class Actuals:
    play_s: float
    bits: float
    hz_s: float
    cycles: float
    eta: float
    interval_s: float

    @property
    def radio_hz(self):
        return self.hz_s / self.interval_s

    @property
    def compute_cps(self):
        return self.cycles / self.interval_s


def transcoded_with_lookahead(played_s, duration, segment_s):
    """Segments up to the playhead plus one precached segment, capped at the video."""
    n = math.ceil(played_s / segment_s - 1e-9) + 1
    return min(n * segment_s, duration)


def meter_actual(plays, bitrate, transcoding, eta, kappa, segment_s, interval_s):
    """Meter one group's playback.

    ``plays`` is a list of ``(played_s, duration_s)``; ``transcoding`` is False
    when the stored top representation is served.
    """
    play_s = float(sum(p for p, _ in plays))
    bits = bitrate * play_s
    hz_s = bits / eta
    cycles = 0.0
    if transcoding:
        secs = sum(transcoded_with_lookahead(p, d, segment_s) for p, d in plays if p > 0)
        cycles = kappa * bitrate * secs
    return Actuals(play_s, bits, hz_s, cycles, eta, interval_s)


def play_group(members, ranking, catalog, t0, interval_s, rng):
    """Multicast playback: a video runs until every member swiped or it ends.

    Returns the per-video ``(played_s, duration)`` list and the watch events
    ``(t_event, record)``.  Watches still running at the interval end are not
    recorded.
    """
    t_end = t0 + interval_s
    t = t0
    plays, events = [], []
    for vid in ranking:
        if t >= t_end:
            break
        i = catalog.index_of(vid)
        dur, cat = float(catalog.durations[i]), int(catalog.categories[i])
        recs = [sample_watch(m, vid, cat, dur, rng) for m in members]
        length = max(r.watched for r in recs)
        played = min(length, t_end - t)
        plays.append((played, dur))
        # event time = the member's own swipe/finish time
        events.extend((t + r.watched, r) for r in recs if r.watched <= played)
        t += length
    return plays, events


@dataclass
class IntervalRow:
    interval_index: int
    group_id: int
    n_members: int
    K: int
    predicted_radio_hz: float
    actual_radio_hz: float
    predicted_compute_cps: float
    actual_compute_cps: float
    accuracy_radio: float
    accuracy_compute: float
    representation: int = 0
    undersupplied: bool = False


@dataclass
class IntervalReport:
    interval_index: int
    K: int = 0
    rows: list = field(default_factory=list)
    cdf_rows: list = field(default_factory=list)
    held_out: list = field(default_factory=list)
    reward: float = float("nan")

    def csv_lines(self):
        return [format_row(r) for r in self.rows]


def _f6(x):
    return f"{x:.6f}"


def format_row(r):
    return ",".join([
        str(r.interval_index), str(r.group_id), str(r.n_members), str(r.K),
        _f6(r.predicted_radio_hz), _f6(r.actual_radio_hz),
        _f6(r.predicted_compute_cps), _f6(r.actual_compute_cps),
        _f6(r.accuracy_radio), _f6(r.accuracy_compute),
    ])


def make_catalog(n, n_categories, dur_range, rng, zipf_exponent=0.8):
    """Random categories and durations; Zipf popularity over a random rank order."""
    cats = rng.integers(n_categories, size=n)
    durs = np.round(rng.uniform(*dur_range, size=n), 1)
    pop = 1.0 / (1.0 + rng.permutation(n)) ** zipf_exponent
    return ab.Catalog(np.arange(n), cats, durs, pop)


def read_trace(path):
    """Watch-trace CSV -> list of WatchRecord."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRACE_COLUMNS:
            raise InvalidRecord(f"{path}: header must be {','.join(TRACE_COLUMNS)}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                uid, vid, cat = int(row[0]), int(row[1]), int(row[2])
                dur, watched = float(row[3]), float(row[4])
            except (ValueError, IndexError):
                raise InvalidRecord(f"{path}:{lineno}: malformed row") from None
            try:
                records.append(ab.WatchRecord.from_watch(uid, vid, cat, dur, watched))
            except InvalidRecord as exc:
                raise InvalidRecord(f"{path}:{lineno}: {exc}") from None
    return records


def estimate_swipe_rates(records, n_categories):
    """Censored-exponential MLE per category: swipes / total watched seconds."""
    swipes = np.zeros(n_categories)
    exposure = np.zeros(n_categories)
    for r in records:
        if not 0 <= r.category < n_categories:
            raise InvalidRecord(f"category {r.category} outside [0, {n_categories})")
        exposure[r.category] += r.watched
        swipes[r.category] += 0 if r.completed else 1
    return np.divide(swipes, exposure, out=np.zeros(n_categories), where=exposure > 0)


class World:
    """Scenario state plus the interval loop.

    ``train_ddqn`` selects ε-greedy online learning of the group-count agent;
    otherwise the agent acts greedily (a trained network can be passed in).
    """

    def __init__(self, cfg, encoder_weights=None, qnet=None, train_ddqn=None):
        self.cfg = cfg
        self.I = float(cfg.interval_s)
        seeds = np.random.SeedSequence(cfg.seed)
        (s_users, s_swipe, s_shadow, s_catalog, s_kmeans, s_ddqn, s_enc) = seeds.spawn(7)
        self.rng_catalog = np.random.default_rng(s_catalog)
        self.rng_kmeans = np.random.default_rng(s_kmeans)
        self.rng_shadow = np.random.default_rng(s_shadow)
        self.rng_swipe = np.random.default_rng(s_swipe)
        self.enc_seed = int(s_enc.generate_state(1)[0])
        self.user_rngs = [np.random.default_rng(s) for s in s_users.spawn(cfg.n_users)]

        sc = cfg.sim
        C = cfg.n_categories
        self.path_loss = PathLoss(sc.pl0_db, sc.d0_m, sc.pl_exp)
        self.bs = base_station_grid(sc.n_bs, sc.area_m, sc.tx_dbm, sc.noise_dbm)
        self.catalog = make_catalog(sc.catalog_size, C, (sc.duration_min_s, sc.duration_max_s),
                                    self.rng_catalog, sc.zipf_exponent)
        base = np.array(cfg.swipe_rates(), dtype=np.float64)
        if cfg.trace_path:
            base = estimate_swipe_rates(read_trace(cfg.trace_path), C)
        self.base_rates = base
        self.users = []
        for uid in range(cfg.n_users):
            rng = self.user_rngs[uid]
            pref = rng.dirichlet(np.ones(C))
            rates = base * np.exp(-sc.preference_strength * (pref - 1.0 / C))
            pos = rng.uniform(0, sc.area_m, 2)
            self.users.append(UserAgent(uid, pos, rng.uniform(0, sc.area_m, 2),
                                        float(rng.uniform(sc.v_min, sc.v_max)), rates, pref))
        for u in self.users:
            u.shadow_db = float(self.rng_shadow.normal(0.0, sc.shadow_db))
            u.bs = self._nearest_bs(u.position)

        tel = cfg.telemetry
        self.schedule = CollectionSchedule(tel.snr_period_s, tel.location_period_s,
                                           tel.behavior_period_s)
        self.bounds = NormalizationBounds((cfg.udt.snr_min_db, cfg.udt.snr_max_db),
                                          (0.0, sc.area_m), (0.0, sc.area_m))
        self.store = UDTStore(C)
        self.user_pref = {}
        self.user_cdf = {}
        self.seen = {u.user_id: set() for u in self.users}
        for u in self.users:
            twin = self.store.add(u.user_id, self.schedule, cfg.udt.capacity)
            twin.ingest(SNR, (0.0, self._snr(u)))
            twin.ingest(LOC_X, (0.0, u.position[0]))
            twin.ingest(LOC_Y, (0.0, u.position[1]))
            for c in range(C):
                twin.ingest(watch_track(c), (0.0, 0.5))
            self.user_pref[u.user_id] = np.full(C, 1.0 / C)
            twin.ingest_preference(0.0, self.user_pref[u.user_id])
            self.user_cdf[u.user_id] = ab.SwipeCdf.empty(C, cfg.abstraction.bins)

        p = cfg.predictor
        self.ladder = BitrateLadder(p.ladder)
        model = ChannelModel(tuple(self.bs), self.path_loss, sc.shadow_corr_m, sc.area_m)
        self.predictor = DemandPredictor(self.ladder, p.kappa, p.segment_s, p.budget_hz, self.I,
                                         p.snr_window, p.channel, model).fit()
        self.now = 0.0
        self.pending = None
        self.prev_ratio, self.prev_k = 1.0, 1

        d = cfg.ddqn
        self.train_ddqn = (qnet is None) if train_ddqn is None else train_ddqn
        if qnet is not None:
            self.agent = GroupCountAgent.from_network(qnet, random_state=s_ddqn)
        else:
            self.agent = GroupCountAgent(
                d.k_min, d.k_max, d.hidden, d.gamma, d.lr, d.eps_start, d.eps_end,
                d.eps_decay_fraction, d.replay, d.batch, d.sync, random_state=s_ddqn,
            ).start(cfg.n_intervals)
        self.encoder_weights = encoder_weights

    # ------------------------------------------------------------ channel
    def _nearest_bs(self, pos):
        return nearest_bs(pos, self.bs)

    def _locations(self, uid):
        """Latest two location samples from the twin as ``(times, xy)``."""
        twin = self.store[uid]
        xs, ys = twin.samples(LOC_X)[-2:], twin.samples(LOC_Y)[-2:]
        return np.array([s.t for s in xs]), np.array([[x.value, y.value] for x, y in zip(xs, ys)])

    def _snr(self, u):
        return snr_db(u.position, self.bs[u.bs], self.path_loss, u.shadow_db)

    def _start_interval_channel(self, moved):
        """Redraw shadowing with correlation exp(-moved/d_corr) and re-associate."""
        sc = self.cfg.sim
        for u, dist in zip(self.users, moved):
            rho = math.exp(-dist / sc.shadow_corr_m)
            z = self.rng_shadow.normal()
            u.shadow_db = rho * u.shadow_db + math.sqrt(max(0.0, 1 - rho * rho)) * sc.shadow_db * z
            u.bs = self._nearest_bs(u.position)

    # ------------------------------------------------------------ simulation
    def simulate_interval(self, groups, plans):
        """Play one interval out and ingest its telemetry.

        ``groups`` is a list of member-id lists; ``plans[g]`` is
        ``(ranking, representation)``.  Returns per-group ``(plays, mean member SNR)``.
        """
        cfg, sc = self.cfg, self.cfg.sim
        t0 = self.now
        start = [u.position.copy() for u in self.users]
        dt = cfg.telemetry.snr_period_s
        n_steps = max(1, int(round(self.I / dt)))
        loc_every = max(1, int(round(cfg.telemetry.location_period_s / dt)))
        snr_sum = np.zeros(len(self.users))
        for step in range(1, n_steps + 1):
            t = t0 + step * dt
            for u in self.users:
                if not sc.static:
                    step_mobility(u, dt, sc.area_m, self.user_rngs[u.user_id], (sc.v_min, sc.v_max))
                s = self._snr(u)
                snr_sum[u.user_id] += s
                twin = self.store[u.user_id]
                twin.ingest(SNR, (t, s))
                if step % loc_every == 0:
                    twin.ingest(LOC_X, (t, u.position[0]))
                    twin.ingest(LOC_Y, (t, u.position[1]))
        mean_snr = snr_sum / n_steps

        out = []
        beta = cfg.abstraction.beta
        for members, (ranking, _) in zip(groups, plans):
            agents = [self.users[m] for m in members]
            plays, events = play_group(agents, ranking, self.catalog, t0, self.I, self.rng_swipe)
            started = {int(v) for v in ranking[:len(plays)]}
            for m in members:
                self.seen[m] |= started
            events.sort(key=lambda e: (e[0], e[1].user_id))
            for t, rec in events:
                twin = self.store[rec.user_id]
                twin.ingest(watch_track(rec.category), (t, rec.fraction))
                self.user_pref[rec.user_id] = ab.update_preference(
                    self.user_pref[rec.user_id], rec, beta)
                twin.ingest_preference(t, self.user_pref[rec.user_id])
            out.append((plays, mean_snr[list(members)]))
        self.now = t0 + self.I
        moved = [float(np.hypot(*(u.position - p))) for u, p in zip(self.users, start)]
        self._start_interval_channel(moved)
        return out

    def recommend(self, members, group_pref):
        """Rank videos for a group, skipping any a member already started.

        Falls back to the full catalog once every video has been seen.
        """
        a = self.cfg.abstraction
        cat = self.catalog
        if a.exclude_seen:
            seen = set().union(*(self.seen[m] for m in members))
            mask = ~np.isin(cat.video_ids, np.fromiter(seen, dtype=np.int64, count=len(seen)))
            if mask.any():
                cat = ab.Catalog(cat.video_ids[mask], cat.categories[mask], cat.durations[mask],
                                 cat.popularity[mask])
        return ab.recommend(group_pref, cat, a.alpha, a.playlist)

    def records_since(self, uid, t_start):
        """Watch records of one user from the UDT watch tracks (fraction scale, D = 1)."""
        twin = self.store[uid]
        recs = []
        for c in range(self.cfg.n_categories):
            for s in twin.since(watch_track(c), t_start, self.now):
                recs.append(ab.WatchRecord(uid, -1, c, 1.0, s.value, s.value == 1.0))
        return recs

    def warmup(self):
        """Play ``encoder.warmup_intervals`` intervals with everybody in one group."""
        mats = []
        everyone = [u.user_id for u in self.users]
        for _ in range(self.cfg.encoder.warmup_intervals):
            t_prev = self.now
            pref = ab.group_preference([self.user_pref[i] for i in everyone]) if everyone else None
            ranking = self.recommend(everyone, pref).video_ids if everyone else []
            if everyone:
                self.simulate_interval([everyone], [(ranking, self.ladder.highest)])
            else:
                self.now += self.I
            for uid in everyone:
                self._update_user_cdf(uid, t_prev)
            mats.extend(self.status_matrices(everyone)[1])
        return mats

    def _update_user_cdf(self, uid, t_prev):
        self.user_cdf[uid] = ab.update_swipe_cdf(self.records_since(uid, t_prev),
                                                 self.user_cdf[uid],
                                                 self.cfg.abstraction.decay)

    def status_matrices(self, uids):
        u = self.cfg.udt
        ok, mats, held = [], [], []
        for uid in uids:
            try:
                mats.append(status_matrix(self.store[uid], self.now, u.horizon_s, u.window_points,
                                          self.bounds))
                ok.append(uid)
            except EmptyTrack:
                held.append(uid)
        self.held_out = held
        return ok, mats

    def fit_encoder(self, matrices):
        e = self.cfg.encoder
        if self.encoder_weights is not None:
            return self.encoder_weights
        if not matrices:
            return None
        est = ConvAutoencoder(e.filters, e.kernel, e.features, e.lr, e.epochs, e.batch,
                              self.enc_seed).fit(np.array(matrices))
        self.encoder_weights = est.encoder_
        self.encoder_loss = est.loss_curve_
        return self.encoder_weights

    # ------------------------------------------------------------ interval loop
    def run_interval(self, index):
        cfg = self.cfg
        d = cfg.ddqn
        report = IntervalReport(index)
        t_prev = self.now - self.I
        uids, mats = self.status_matrices([u.user_id for u in self.users])
        report.held_out = list(self.held_out)
        if not uids:
            self.now += self.I
            return report
        X = np.array([encode(m, self.encoder_weights) for m in mats])
        k_max = min(d.k_max, len(uids))
        state = cluster_state(X, max(cfg.n_users, 1), self.prev_ratio, self.prev_k, d.k_max)
        if self.pending is not None and self.train_ddqn:
            s, k, r = self.pending
            self.agent.observe(s, k, r, state, False)
        K = self.agent.act(state, n_users=k_max, greedy=not self.train_ddqn)
        assign = construct_groups(X, K, self.rng_kmeans)
        reward = cluster_reward(assign, K, d.lam, d.k_max)
        self.pending = (state, K, reward)
        tss = assign.total_ss
        self.prev_ratio = assign.wcss / tss if tss > 0 else 0.0
        self.prev_k = K
        report.K, report.reward = K, reward

        groups, plans, forecasts = [], [], []
        for g in range(K):
            members = [uids[i] for i in assign.members(g)]
            records = [r for m in members for r in self.records_since(m, t_prev)]
            prior = ab.pool_cdfs([self.user_cdf[m] for m in members])
            gcdf = ab.update_swipe_cdf(records, prior, cfg.abstraction.decay)
            gpref = ab.group_preference([self.user_pref[m] for m in members])
            playlist = self.recommend(members, gpref)
            histories = [self.store[m].last(SNR, cfg.predictor.snr_window) for m in members]
            locs = [self._locations(m) for m in members]
            fc = self.predictor.forecast(g, index, histories, gcdf, playlist, self.catalog,
                                         member_locations=locs, now=self.now)
            groups.append(members)
            plans.append((playlist.video_ids, fc.representation))
            forecasts.append(fc)
            for c in range(cfg.n_categories):
                for b, x in enumerate(gcdf.grid):
                    report.cdf_rows.append((index, g, c, float(x), float(gcdf.F[c, b])))
        for m in uids:
            self._update_user_cdf(m, t_prev)

        outcomes = self.simulate_interval(groups, plans)
        p = cfg.predictor
        for g, (fc, (plays, member_snr)) in enumerate(zip(forecasts, outcomes)):
            eta = float(spectral_efficiency(np.min(member_snr)))
            rep = fc.representation
            act = meter_actual(plays, self.ladder.bitrate(rep), rep != self.ladder.highest, eta,
                               p.kappa, p.segment_s, self.I)
            dem = fc.demand
            report.rows.append(IntervalRow(
                index, g, len(groups[g]), K, dem.radio_hz, act.radio_hz, dem.compute_cps,
                act.compute_cps, accuracy(dem.radio_hz, act.radio_hz),
                accuracy(dem.compute_cps, act.compute_cps), rep, fc.plan.undersupplied,
            ))
        if index == cfg.n_intervals - 1 and self.train_ddqn:
            self.agent.observe(state, K, reward, state, True)
            self.pending = None
        return report


def run_scenario(cfg, encoder_weights=None, qnet=None, progress=None):
    """Warm up, fit the encoder if needed, then run every interval."""
    world = World(cfg, encoder_weights, qnet)
    mats = world.warmup()
    world.fit_encoder(mats)
    reports = []
    for i in range(cfg.n_intervals):
        reports.append(world.run_interval(i))
        if progress is not None:
            progress(reports[-1])
    return world, reports


def load_models(cfg):
    enc = load_encoder(cfg.encoder.weights) if cfg.encoder.weights else None
    qnet = load_qnetwork(cfg.ddqn.weights) if cfg.ddqn.weights else None
    return enc, qnet


def scenario_feature_pool(cfg, encoder_weights=None):
    """Encoded user features after each of ``cfg.n_intervals`` single-group intervals.

    Used as the DDQN training environment for the scenario's own users.
    """
    world = World(cfg, encoder_weights, train_ddqn=False)
    world.fit_encoder(world.warmup())
    pool = []
    everyone = [u.user_id for u in world.users]
    if not everyone:
        return world, pool
    for _ in range(cfg.n_intervals):
        uids, mats = world.status_matrices(everyone)
        if len(uids) >= 1:
            pool.append(np.array([encode(m, world.encoder_weights) for m in mats]))
        pref = ab.group_preference([world.user_pref[i] for i in everyone])
        ranking = world.recommend(everyone, pref).video_ids
        t_prev = world.now
        world.simulate_interval([everyone], [(ranking, world.ladder.highest)])
        for uid in everyone:
            world._update_user_cdf(uid, t_prev)
    return world, pool
