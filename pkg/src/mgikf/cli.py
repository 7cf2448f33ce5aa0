"""Command-line driver: validate, measure, ld, trace."""

import argparse
import csv
import math
import os
import sys
from pathlib import Path

import numpy as np

from .analysis import (RareEvent, dirac_convergence_report, empirical_cdf, ld_bounds, ld_exponent_estimate,
                       rare_event_probability, sample_invariant_measure, sandwich_ok, statistic)
from .config import load_config
from .errors import ConfigurationError, DivergenceError
from .filtering import run_filter, write_run_csv
from .gossip import estimate_q
from .model import check_stabilizability, check_weak_detectability
from .network import check_irreducible_aperiodic
from .riccati import centralized_fixed_point
from .streams import RunStreams, derive_rng

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
MAX_FAILURE_RATE = 0.01
CDF_LEVELS = np.round(np.arange(1, 100) / 100, 2)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows, cfg):
    """Header, rows, then a metadata comment carrying the config digest and seed."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in r])
        fh.write(f"# config_sha256={cfg.digest} seed={cfg.seed}\n")


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))


def _say(msg):
    print(msg, flush=True)


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr, flush=True)


def _out_dir(cfg, args):
    out = Path(args.out) if args.out else cfg.out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _events(cfg, P_star):
    """One rare event per configured statistic, on the raw scale."""
    events = []
    for s in cfg.statistics:
        c = statistic(P_star, s)
        radius = cfg.epsilon if cfg.epsilon is not None else cfg.epsilon_fraction * c
        events.append(RareEvent(s, c, radius))
    return events


def _fixed_point(cfg):
    try:
        return centralized_fixed_point(cfg.scenario.system, cfg.scenario.suite)
    except DivergenceError as exc:
        raise ConfigurationError(f"centralized Riccati iteration diverges: {exc}") from exc


def cmd_validate(cfg, args):
    sc = cfg.scenario
    ok = True
    stab = check_stabilizability(sc.system)
    _say(f"stabilizability: {'pass' if stab.ok else 'FAIL'} ({stab.path}; {stab.detail})")
    ok &= stab.ok
    chain = check_irreducible_aperiodic(sc.mean_adjacency)
    _say(f"mean adjacency irreducible/aperiodic: {'pass' if chain.ok else 'FAIL'} ({chain.detail})")
    ok &= chain.ok
    detect = check_weak_detectability(sc.system, sc.suite, sc.mean_adjacency,
                                  rng=derive_rng(cfg.seed, 0, 101))
    _say(f"weak detectability: {detect.status} ({detect.detail})")
    if detect.status == "inconclusive":
        _warn("no detectability walk found within the search caps")
    elif detect.status != "satisfied":
        ok = False
    g = min(x for x in cfg.gamma if x > 0) if any(x > 0 for x in cfg.gamma) else 0.0
    est = estimate_q(sc.topology, g, 2000, derive_rng(cfg.seed, 0, 102))
    full = est.full_set()
    if np.all(full > 0):
        _say(f"full-set reception at gamma_bar={g:g}: pass (min q_hat={full.min():.4g} over 2000 trials)")
    else:
        _say(f"full-set reception at gamma_bar={g:g}: inconclusive (q_hat={full.tolist()})")
        _warn("some sensor never received every observation in the spot check")
    _say("validate: " + ("ok" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_FAIL


def _measures(cfg, args, P_star):
    out = []
    for g in cfg.gamma:
        m = sample_invariant_measure(cfg.scenario, g, cfg.burn_in, cfg.n_samples, cfg.seed,
                                     workers=args.workers, P_star=P_star)
        _say(f"gamma_bar={g:g}: {m.n_samples} samples, failure rate {m.failure_rate:.4f}")
        out.append(m)
    return out


def cmd_measure(cfg, args):
    out = _out_dir(cfg, args)
    P_star = _fixed_point(cfg)
    ms = _measures(cfg, args, P_star)
    tr_s, lm_s = statistic(P_star, "trace"), statistic(P_star, "lambda_max")
    rows, cdf_rows = [], []
    for m in ms:
        for i in range(m.n_samples):
            rows.append((m.gamma_bar, i, m.trace[i] / tr_s, m.lambda_max[i] / lm_s))
        for s in ("trace", "lambda_max"):
            v = m.values(s, normalized=True)
            if v.size == 0:
                continue
            q = empirical_cdf(v).quantile(CDF_LEVELS)
            cdf_rows.extend((m.gamma_bar, s, p, x) for p, x in zip(CDF_LEVELS, q))
    write_csv(out / "measure.csv", ["gamma_bar", "sample_id", "trace_norm", "lmax_norm"], rows, cfg)
    write_csv(out / "cdf.csv", ["gamma_bar", "stat", "level", "value"], cdf_rows, cfg)
    status = EXIT_OK
    finite = [m for m in ms if m.values("trace").size]
    if len(finite) >= 2:
        rep = dirac_convergence_report(finite)
        write_csv(out / "dirac.csv", ["gamma_bar", "median_dev", "p90_dev"],
                  list(zip(rep.gamma_bar, rep.median, rep.p90)), cfg)
        if not rep.strictly_decreasing:
            _warn("median deviation from Tr(P*) is not strictly decreasing along the grid")
    for m in ms:
        if m.failure_rate > MAX_FAILURE_RATE:
            _say(f"diverged: {m.failure_rate:.2%} of runs at gamma_bar={m.gamma_bar:g} exceeded the overflow guard "
                 f"(limit {MAX_FAILURE_RATE:.0%}); the model may violate weak detectability")
            status = EXIT_FAIL
    _say(f"wrote {out / 'measure.csv'} and {out / 'cdf.csv'}")
    return status


def _samples_from_csv(path, P_star):
    """Rebuild per-grid raw samples from a measure dump."""
    tr_s, lm_s = statistic(P_star, "trace"), statistic(P_star, "lambda_max")
    by_gamma = {}
    for r in read_csv(path):
        g = float(r["gamma_bar"])
        d = by_gamma.setdefault(g, {"trace": [], "lambda_max": []})
        t, lm = float(r["trace_norm"]), float(r["lmax_norm"])
        if math.isfinite(t):
            d["trace"].append(t * tr_s)
            d["lambda_max"].append(lm * lm_s)
    return {g: {k: np.array(v) for k, v in d.items()} for g, d in by_gamma.items()}


def cmd_ld(cfg, args):
    out = _out_dir(cfg, args)
    if any(g <= 0 for g in cfg.gamma):
        raise ConfigurationError("experiment.gamma: exponent runs need a strictly positive grid")
    P_star = _fixed_point(cfg)
    if args.measure:
        samples = _samples_from_csv(args.measure, P_star)
        missing = [g for g in cfg.gamma if g not in samples]
        if missing:
            raise ConfigurationError(f"{args.measure} has no samples for gamma_bar {missing}")
    else:
        samples = {m.gamma_bar: {s: m.values(s) for s in ("trace", "lambda_max")}
                   for m in _measures(cfg, args, P_star)}
    rows, status, capped_any = [], EXIT_OK, False
    for ev in _events(cfg, P_star):
        b = ld_bounds(cfg.scenario, ev, P_star=P_star, L=cfg.ld["L"], max_len=cfg.ld["max_len"],
                      max_expansions=cfg.ld["max_expansions"], path_graph=cfg.ld["path_graph"])
        capped_any |= b.capped
        ests = [rare_event_probability(samples[g][ev.statistic], ev) for g in cfg.gamma]
        for g, est, ex in zip(cfg.gamma, ests, ld_exponent_estimate(cfg.gamma, ests)):
            inside = sandwich_ok(ex, b)
            if not inside:
                status = EXIT_FAIL
                _say(f"sandwich violated: {ev.statistic} gamma_bar={g:g} exponent {ex.exponent:.4f} "
                     f"outside [{b.lower_exponent:.4f}, {b.upper_exponent:.4f}] by more than 2 sigma")
            if ex.censored:
                _say(f"{ev.statistic} gamma_bar={g:g}: no rare-event hits in {est.n} samples (censored)")
            rows.append((g, ev.statistic, ev.radius, est.p_hat, est.ci_lo, est.ci_hi, ex.exponent,
                         b.lower_exponent, b.upper_exponent, b.capped, ex.sigma, int(ex.censored), inside))
    write_csv(out / "exponents.csv",
              ["gamma_bar", "stat", "epsilon", "p_hat", "ci_lo", "ci_hi", "exponent", "lower_bound",
               "upper_bound", "capped", "sigma", "censored", "in_band"], rows, cfg)
    if capped_any:
        _warn("LD string search hit its caps; affected bounds are reported with capped=1")
    _say(f"wrote {out / 'exponents.csv'}")
    return status


def cmd_trace(cfg, args):
    out = _out_dir(cfg, args)
    sc = cfg.scenario
    g = args.gamma if args.gamma is not None else cfg.gamma[0]
    streams = RunStreams.from_seed(cfg.seed, 0)
    recs = list(run_filter(sc.system, sc.suite, sc.topology, sc.dist, g, args.epochs, streams,
                           mode=args.mode))
    path = out / "trace.csv"
    write_run_csv(recs, path)
    with open(path, "a") as fh:
        fh.write(f"# config_sha256={cfg.digest} seed={cfg.seed}\n")
    _say(f"wrote {path} ({args.epochs} epochs at gamma_bar={g:g})")
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "measure": cmd_measure, "ld": cmd_ld, "trace": cmd_trace}


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit value")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment TOML file")
    common.add_argument("--seed", type=_u64, default=None, help="master seed (overrides config and env)")
    common.add_argument("--workers", type=_positive, default=os.cpu_count() or 1)
    common.add_argument("--out", default=None, help="output directory (overrides config)")
    p = argparse.ArgumentParser(prog="mgikf", description="Gossip Kalman filter invariant-measure experiments")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check model and network assumptions")
    sub.add_parser("measure", parents=[common], help="sample the invariant measure per gamma_bar")
    ld = sub.add_parser("ld", parents=[common], help="rare-event exponents with LD bounds")
    ld.add_argument("--measure", default=None, help="reuse samples from a measure.csv instead of sampling")
    tr = sub.add_parser("trace", parents=[common], help="dump one run's covariance path")
    tr.add_argument("--epochs", type=_positive, default=200)
    tr.add_argument("--gamma", type=float, default=None, help="gamma_bar (default: first grid value)")
    tr.add_argument("--mode", choices=("mgikf", "gikf"), default="mgikf")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, cli_seed=args.seed)
        return COMMANDS[args.command](cfg, args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
