"""Scenario configuration: flat ``key=value`` text with dotted section keys.

Example::

    # 20 users, defaults elsewhere
    n_users=20
    ddqn.gamma=0.9
    sim.swipe_rates=0.04,0.07,0.10,0.15
"""

import dataclasses
from dataclasses import dataclass, field, fields

from .exceptions import IoFailure, ParseError, ValidationError

CATEGORY_NAMES = ("News", "Sports", "Music", "Game")


@dataclass
class UdtConfig:
    capacity: int = 256
    window_points: int = 16
    horizon_s: float = 300.0
    snr_min_db: float = 40.0
    snr_max_db: float = 80.0


@dataclass
class TelemetryConfig:
    snr_period_s: float = 1.0
    location_period_s: float = 5.0
    behavior_period_s: float = 15.0


@dataclass
class EncoderConfig:
    filters: int = 8
    kernel: int = 3
    features: int = 8
    lr: float = 0.1
    epochs: int = 30
    batch: int = 8
    warmup_intervals: int = 2
    weights: str = ""


@dataclass
class DdqnConfig:
    k_min: int = 1
    k_max: int = 8
    hidden: int = 32
    gamma: float = 0.9
    lam: float = 0.1
    lr: float = 0.01
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.8
    replay: int = 4096
    batch: int = 32
    sync: int = 64
    episodes: int = 1000
    episode_steps: int = 10
    env: str = "scenario"
    n_init: int = 1
    eval_episodes: int = 100
    weights: str = ""


@dataclass
class AbstractionConfig:
    bins: int = 20
    exclude_seen: bool = True
    decay: float = 0.7
    alpha: float = 0.5
    playlist: int = 100
    beta: float = 0.02


@dataclass
class PredictorConfig:
    ladder: tuple = (1.0e6, 2.5e6, 5.0e6, 8.0e6, 16.0e6, 40.0e6)
    kappa: float = 50.0
    segment_s: float = 2.0
    budget_hz: float = 2e6
    snr_window: int = 8
    channel: str = "trajectory"


@dataclass
class SimConfig:
    area_m: float = 2000.0
    v_min: float = 0.5
    v_max: float = 2.0
    static: bool = False
    n_bs: int = 4
    tx_dbm: float = 46.0
    noise_dbm: float = -97.0
    pl0_db: float = 40.0
    d0_m: float = 10.0
    pl_exp: float = 3.0
    shadow_db: float = 4.0
    shadow_corr_m: float = 50.0
    swipe_rates: tuple = (0.04, 0.07, 0.10, 0.15)
    preference_strength: float = 2.0
    catalog_size: int = 2000
    zipf_exponent: float = 0.8
    duration_min_s: float = 10.0
    duration_max_s: float = 30.0


@dataclass
class ScenarioConfig:
    seed: int = 42
    n_users: int = 20
    n_categories: int = 4
    n_intervals: int = 50
    interval_s: float = 300.0
    trace_path: str = ""
    udt: UdtConfig = field(default_factory=UdtConfig)
    telemetry: TelemetryConfig = field(default_factory=TelemetryConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    ddqn: DdqnConfig = field(default_factory=DdqnConfig)
    abstraction: AbstractionConfig = field(default_factory=AbstractionConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def category_names(self):
        if self.n_categories == len(CATEGORY_NAMES):
            return list(CATEGORY_NAMES)
        return [f"cat{c}" for c in range(self.n_categories)]

    def swipe_rates(self):
        """Per-category base swipe rates, stretched/truncated to n_categories."""
        r = list(self.sim.swipe_rates)
        if len(r) == self.n_categories:
            return r
        if len(r) == 1:
            return r * self.n_categories
        lo, hi = min(r), max(r)
        step = (hi - lo) / max(self.n_categories - 1, 1)
        return [lo + i * step for i in range(self.n_categories)]

    def with_overrides(self, **kv):
        """Copy with dotted-key overrides, e.g. ``with_overrides(**{"sim.static": True})``."""
        cfg = dataclasses.replace(self, **{
            f.name: dataclasses.replace(getattr(self, f.name))
            for f in fields(self) if dataclasses.is_dataclass(getattr(self, f.name))
        })
        for key, value in kv.items():
            section, name = _locate(cfg, key)
            setattr(section, name, value)
        validate(cfg)
        return cfg


# key aliases where the file key is not a valid identifier
_ALIASES = {"ddqn.lambda": "ddqn.lam"}


def _locate(cfg, key):
    key = _ALIASES.get(key, key)
    parts = key.split(".")
    obj = cfg
    for p in parts[:-1]:
        if not hasattr(obj, p) or not dataclasses.is_dataclass(getattr(obj, p)):
            raise ParseError(f"unknown key {key!r}", key=key)
        obj = getattr(obj, p)
    names = {f.name for f in fields(obj)}
    if parts[-1] not in names or dataclasses.is_dataclass(getattr(obj, parts[-1])):
        raise ParseError(f"unknown key {key!r}", key=key)
    return obj, parts[-1]


def _convert(raw, default, key):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ValidationError(key, f"cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(text):
    cfg = ScenarioConfig()
    seen = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected key=value", line=lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ParseError(f"line {lineno}: duplicate key {key!r}", line=lineno, key=key)
        seen[key] = lineno
        try:
            section, name = _locate(cfg, key)
        except ParseError as exc:
            raise ParseError(f"line {lineno}: unknown key {key!r}", line=lineno, key=key) from exc
        setattr(section, name, _convert(raw, getattr(section, name), key))
    validate(cfg)
    return cfg


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _check(cond, key, msg):
    if not cond:
        raise ValidationError(key, msg)


def validate(cfg):
    """Check every invariant, naming the first offending key."""
    _check(cfg.n_users >= 0, "n_users", "must be >= 0")
    _check(cfg.n_categories >= 1, "n_categories", "must be >= 1")
    _check(cfg.n_intervals >= 1, "n_intervals", "must be >= 1")
    _check(cfg.interval_s > 0, "interval_s", "must be > 0")

    u = cfg.udt
    _check(u.capacity >= 1, "udt.capacity", "must be >= 1")
    _check(u.window_points >= 2, "udt.window_points", "must be >= 2")
    _check(u.horizon_s > 0, "udt.horizon_s", "must be > 0")
    _check(u.snr_max_db > u.snr_min_db, "udt.snr_max_db", "must exceed udt.snr_min_db")

    t = cfg.telemetry
    _check(t.snr_period_s > 0, "telemetry.snr_period_s", "must be > 0")
    _check(t.location_period_s >= t.snr_period_s, "telemetry.location_period_s",
           "must be >= telemetry.snr_period_s")
    _check(t.behavior_period_s >= t.location_period_s, "telemetry.behavior_period_s",
           "must be >= telemetry.location_period_s")

    e = cfg.encoder
    _check(e.filters >= 1, "encoder.filters", "must be >= 1")
    _check(e.kernel >= 1 and e.kernel % 2 == 1, "encoder.kernel", "must be odd and >= 1")
    _check(e.features >= 1, "encoder.features", "must be >= 1")
    _check(e.lr > 0, "encoder.lr", "must be > 0")
    _check(e.epochs >= 0, "encoder.epochs", "must be >= 0")
    _check(e.batch >= 1, "encoder.batch", "must be >= 1")
    _check(e.warmup_intervals >= 1, "encoder.warmup_intervals", "must be >= 1")

    d = cfg.ddqn
    _check(d.k_min >= 1, "ddqn.k_min", "must be >= 1")
    _check(d.k_max >= d.k_min, "ddqn.k_max", "must be >= ddqn.k_min")
    _check(d.hidden >= 1, "ddqn.hidden", "must be >= 1")
    _check(0 <= d.gamma < 1, "ddqn.gamma", "must be in [0, 1)")
    _check(d.lam >= 0, "ddqn.lambda", "must be >= 0")
    _check(d.lr > 0, "ddqn.lr", "must be > 0")
    _check(0 <= d.eps_end <= d.eps_start <= 1, "ddqn.eps_start", "need 0 <= eps_end <= eps_start <= 1")
    _check(0 < d.eps_decay_fraction <= 1, "ddqn.eps_decay_fraction", "must be in (0, 1]")
    _check(d.replay >= 1, "ddqn.replay", "must be >= 1")
    _check(1 <= d.batch <= d.replay, "ddqn.batch", "must be in [1, ddqn.replay]")
    _check(d.sync >= 1, "ddqn.sync", "must be >= 1")
    _check(d.episodes >= 0, "ddqn.episodes", "must be >= 0")
    _check(d.episode_steps >= 1, "ddqn.episode_steps", "must be >= 1")
    _check(d.env in ("scenario", "blobs"), "ddqn.env", "must be 'scenario' or 'blobs'")
    _check(d.n_init >= 1, "ddqn.n_init", "must be >= 1")
    _check(d.eval_episodes >= 0, "ddqn.eval_episodes", "must be >= 0")

    a = cfg.abstraction
    _check(a.bins >= 1, "abstraction.bins", "must be >= 1")
    _check(0 <= a.decay < 1, "abstraction.decay", "must be in [0, 1)")
    _check(0 <= a.alpha <= 1, "abstraction.alpha", "must be in [0, 1]")
    _check(a.playlist >= 1, "abstraction.playlist", "must be >= 1")
    _check(0 < a.beta < 1, "abstraction.beta", "must be in (0, 1)")

    p = cfg.predictor
    lad = p.ladder
    _check(len(lad) >= 1 and all(b > 0 for b in lad)
           and all(lad[i] < lad[i + 1] for i in range(len(lad) - 1)),
           "predictor.ladder", "must be positive and strictly increasing")
    _check(p.kappa > 0, "predictor.kappa", "must be > 0")
    _check(p.segment_s > 0, "predictor.segment_s", "must be > 0")
    _check(p.budget_hz > 0, "predictor.budget_hz", "must be > 0")
    _check(p.snr_window >= 1, "predictor.snr_window", "must be >= 1")
    _check(p.channel in ("persistence", "trajectory"), "predictor.channel",
           "must be 'persistence' or 'trajectory'")

    s = cfg.sim
    _check(s.area_m > 0, "sim.area_m", "must be > 0")
    _check(s.v_min > 0, "sim.v_min", "must be > 0")
    _check(s.v_max >= s.v_min, "sim.v_max", "must be >= sim.v_min")
    _check(s.n_bs >= 1, "sim.n_bs", "must be >= 1")
    _check(s.d0_m > 0, "sim.d0_m", "must be > 0")
    _check(s.pl_exp > 0, "sim.pl_exp", "must be > 0")
    _check(s.shadow_db >= 0, "sim.shadow_db", "must be >= 0")
    _check(s.shadow_corr_m > 0, "sim.shadow_corr_m", "must be > 0")
    _check(len(s.swipe_rates) >= 1 and all(r >= 0 for r in s.swipe_rates),
           "sim.swipe_rates", "must be non-negative")
    _check(s.preference_strength >= 0, "sim.preference_strength", "must be >= 0")
    _check(s.catalog_size >= 1, "sim.catalog_size", "must be >= 1")
    _check(s.zipf_exponent >= 0, "sim.zipf_exponent", "must be >= 0")
    _check(s.duration_min_s > 0, "sim.duration_min_s", "must be > 0")
    _check(s.duration_max_s >= s.duration_min_s, "sim.duration_max_s",
           "must be >= sim.duration_min_s")
    return cfg


def dump_config(cfg):
    """Inverse of ``parse_config`` (every key, defaults included)."""
    lines = []

    def emit(prefix, obj):
        for f in fields(obj):
            v = getattr(obj, f.name)
            if dataclasses.is_dataclass(v):
                emit(f"{prefix}{f.name}.", v)
                continue
            key = f"{prefix}{f.name}"
            key = {v2: k for k, v2 in _ALIASES.items()}.get(key, key)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{key}={v}")

    emit("", cfg)
    return "\n".join(lines) + "\n"
