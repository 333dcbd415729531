"""Command line: ``run``, ``train-encoder``, ``train-ddqn`` and ``import-trace``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""

import argparse
import os
import sys
import time

import numpy as np

from . import abstraction as ab
from .config import ScenarioConfig, load_config
from .encoder import ConvAutoencoder, reconstruction_loss, save_encoder
from .exceptions import DTMError, IoFailure, ParseError, ValidationError
from .grouping import (
    BLOB_CENTERS,
    ClusteringEnv,
    GroupCountAgent,
    blob_features,
    greedy_first_choices,
    save_qnetwork,
)
from .sim import (
    CDF_COLUMNS,
    INTERVAL_COLUMNS,
    World,
    estimate_swipe_rates,
    format_row,
    load_models,
    read_trace,
    run_scenario,
    scenario_feature_pool,
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _f6(x):
    return f"{x:.6f}"


def _open_out_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create output directory {path}: {exc}") from exc


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def intervals_csv(reports):
    lines = [",".join(INTERVAL_COLUMNS)]
    lines += [format_row(r) for rep in reports for r in rep.rows]
    return "\n".join(lines) + "\n"


def cdf_csv(reports):
    lines = [",".join(CDF_COLUMNS)]
    for rep in reports:
        for i, g, c, x, F in rep.cdf_rows:
            lines.append(f"{i},{g},{c},{_f6(x)},{_f6(F)}")
    return "\n".join(lines) + "\n"


def summarize(reports, runtime_s, top_rep=None):
    rows = [r for rep in reports for r in rep.rows]
    ks = [rep.K for rep in reports if rep.rows]

    def mean(xs):
        return float(np.mean(xs)) if len(xs) else float("nan")

    out = {
        "intervals": len(reports),
        "groups": len(rows),
        "mean_accuracy_radio": mean([r.accuracy_radio for r in rows]),
        "mean_accuracy_compute": mean([r.accuracy_compute for r in rows]),
        "mean_K": mean(ks),
        "transcoded_fraction": mean([r.representation != top_rep for r in rows]),
        "held_out_users": sum(len(rep.held_out) for rep in reports),
        "runtime_s": runtime_s,
    }
    return out


def format_summary(summary):
    lines = []
    for k, v in summary.items():
        lines.append(f"{k}: {_f6(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


def cmd_run(cfg, out_dir):
    _open_out_dir(out_dir)
    enc, qnet = load_models(cfg)
    t0 = time.perf_counter()
    world, reports = run_scenario(cfg, enc, qnet)
    runtime = time.perf_counter() - t0
    summary = summarize(reports, runtime, world.ladder.highest)
    _write_text(os.path.join(out_dir, "intervals.csv"), intervals_csv(reports))
    _write_text(os.path.join(out_dir, "cdf.csv"), cdf_csv(reports))
    _write_text(os.path.join(out_dir, "summary.txt"), format_summary(summary))
    sys.stdout.write(format_summary(summary))
    return EXIT_OK


def cmd_train_encoder(cfg, out_path):
    world = World(cfg, train_ddqn=False)
    mats = world.warmup()
    if not mats:
        raise DTMError("no status matrices to train on (n_users = 0?)")
    e = cfg.encoder
    est = ConvAutoencoder(e.filters, e.kernel, e.features, e.lr, e.epochs, e.batch,
                          world.enc_seed).fit(np.array(mats))
    save_encoder(est.encoder_, out_path)
    if est.loss_curve_:
        loss = est.loss_curve_[-1]
    else:
        loss = float(np.mean([reconstruction_loss(m, est.encoder_, est.decoder_) for m in mats]))
    print(f"final_loss: {_f6(loss)}")
    return EXIT_OK


def ddqn_env(cfg):
    d = cfg.ddqn
    if d.env == "blobs":
        return ClusteringEnv(blob_features, d.episode_steps, 30, d.k_max, d.lam, d.n_init,
                             cfg.seed)
    enc, _ = load_models(cfg)
    _, pool = scenario_feature_pool(cfg, enc)
    if not pool:
        raise DTMError("scenario produced no feature sets (n_users = 0?)")
    L = d.episode_steps

    def source(ep, t, rng):
        return pool[(ep * L + t) % len(pool)]

    return ClusteringEnv(source, L, max(cfg.n_users, 1), d.k_max, d.lam, d.n_init, cfg.seed)


def cmd_train_ddqn(cfg, out_path):
    d = cfg.ddqn
    env = ddqn_env(cfg)
    agent = GroupCountAgent(d.k_min, d.k_max, d.hidden, d.gamma, d.lr, d.eps_start, d.eps_end,
                            d.eps_decay_fraction, d.replay, d.batch, d.sync, d.episodes,
                            random_state=cfg.seed).fit(env)
    save_qnetwork(agent.online_, out_path)
    tail = agent.episode_rewards_[-max(1, len(agent.episode_rewards_) // 10):]
    print(f"mean_episode_reward: {_f6(float(np.mean(tail)))}")
    if d.env == "blobs":
        env.seed = cfg.seed + 1
        ks = greedy_first_choices(agent, env, d.eval_episodes)
        print(f"greedy_K_equals_{len(BLOB_CENTERS)}: {_f6(float(np.mean(ks == len(BLOB_CENTERS))))}")
    return EXIT_OK


def cmd_import_trace(cfg, trace_path, out_dir):
    records = read_trace(trace_path)
    C = cfg.n_categories
    rates = estimate_swipe_rates(records, C)
    line = "sim.swipe_rates=" + ",".join(repr(float(r)) for r in rates)
    cdf = ab.update_swipe_cdf(records, ab.SwipeCdf.empty(C, cfg.abstraction.bins))
    _open_out_dir(out_dir)
    _write_text(os.path.join(out_dir, "rates.conf"), line + "\n")
    rows = ["category,bin_x,F"]
    for c in range(C):
        rows += [f"{c},{_f6(x)},{_f6(f)}" for x, f in zip(cdf.grid, cdf.F[c])]
    _write_text(os.path.join(out_dir, "trace_cdf.csv"), "\n".join(rows) + "\n")
    print(f"records: {len(records)}")
    print(line)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="dtmcast", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_help, out_default):
        sp.add_argument("--config", help="key=value scenario file (defaults if omitted)")
        sp.add_argument("--out", default=out_default, help=out_help)
        sp.add_argument("--seed", type=int, help="overrides the config seed")

    common(sub.add_parser("run", help="simulate and score every interval"), "output directory",
           "out")
    common(sub.add_parser("train-encoder", help="fit the status autoencoder"), "weights file",
           "encoder.txt")
    common(sub.add_parser("train-ddqn", help="train the group-count agent"), "weights file",
           "ddqn.txt")
    sp = sub.add_parser("import-trace", help="estimate swipe rates from a watch trace")
    sp.add_argument("trace", help="CSV watch trace")
    common(sp, "output directory", "trace_out")
    return p


def _config(args):
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
    except (ParseError, ValidationError, IoFailure) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "run":
            return cmd_run(cfg, args.out)
        if args.command == "train-encoder":
            return cmd_train_encoder(cfg, args.out)
        if args.command == "train-ddqn":
            return cmd_train_ddqn(cfg, args.out)
        return cmd_import_trace(cfg, args.trace, args.out)
    except (DTMError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
