"""Invariant-measure sampling, rare-event statistics and LD bound search."""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .filtering import initial_ensemble, step_mgikf
from .network import (default_hitting_horizon, dissemination_chain, hitting_constants, mean_adjacency,
                      weight_table)
from .riccati import best_first_search, centralized_fixed_point
from .streams import RunStreams

OVERFLOW_GUARD = 1e12
DELTA_SET = 1e-9
STATISTICS = ("trace", "lambda_max")


@dataclass(frozen=True, eq=False)
class Scenario:
    system: object
    suite: object
    topology: object
    dist: object

    @property
    def mean_adjacency(self):
        return mean_adjacency(self.dist)


def statistic(X, which):
    if which == "trace":
        return float(np.trace(X))
    if which == "lambda_max":
        return float(np.linalg.eigvalsh(X)[-1])
    raise ValueError(f"unknown statistic {which!r}")


@dataclass
class EmpiricalMeasure:
    gamma_bar: float
    trace: np.ndarray
    lambda_max: np.ndarray
    sensors: np.ndarray
    failed: np.ndarray
    burn_in: int
    seed: int
    P_star: np.ndarray
    matrices: np.ndarray = None

    @property
    def n_samples(self):
        return len(self.trace)

    def values(self, which, normalized=False):
        v = self.trace if which == "trace" else self.lambda_max
        v = v[~self.failed]
        if normalized:
            v = v / statistic(self.P_star, which)
        return v

    @property
    def failure_rate(self):
        return float(self.failed.mean()) if len(self.failed) else 0.0


def _one_sample(scenario, gamma_bar, burn_in, seed, sample_id, keep_matrix):
    st = RunStreams.from_seed(seed, sample_id)
    ens = initial_ensemble(scenario.system, scenario.suite.N, track_particles=False)
    failed = False
    for _ in range(burn_in):
        ens = step_mgikf(ens, scenario.system, scenario.suite, scenario.topology, scenario.dist, gamma_bar,
                         None, st, with_estimates=False)
        if not np.all(np.isfinite(ens.P)) or np.trace(ens.P, axis1=1, axis2=2).max() > OVERFLOW_GUARD:
            failed = True
            break
    q = int(st.init.integers(scenario.suite.N))
    P = ens.P[q]
    if failed:
        return q, math.nan, math.nan, True, None
    return q, float(np.trace(P)), float(np.linalg.eigvalsh(P)[-1]), False, (P if keep_matrix else None)


def _sample_chunk(args):
    scenario, gamma_bar, burn_in, seed, ids, keep = args
    return [_one_sample(scenario, gamma_bar, burn_in, seed, i, keep) for i in ids]


def sample_invariant_measure(scenario, gamma_bar, burn_in, n_samples, seed, workers=1, P_star=None,
                             keep_matrices=False, chunk=64):
    """Independent fresh runs; each records the covariance of a uniformly drawn sensor.

    Sample ``i`` always uses streams derived from ``(seed, i)``, so results
    do not depend on ``workers``.
    """
    if burn_in < 1:
        raise ValueError("burn_in must be >= 1")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if P_star is None:
        P_star = centralized_fixed_point(scenario.system, scenario.suite)
    jobs = [(scenario, gamma_bar, burn_in, seed, range(a, min(a + chunk, n_samples)), keep_matrices)
            for a in range(0, n_samples, chunk)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_sample_chunk, jobs))
    else:
        parts = [_sample_chunk(j) for j in jobs]
    rows = [r for part in parts for r in part]
    mats = None
    if keep_matrices:
        M = scenario.system.M
        mats = np.stack([r[4] if r[4] is not None else np.full((M, M), np.nan) for r in rows])
    return EmpiricalMeasure(
        gamma_bar=gamma_bar,
        trace=np.array([r[1] for r in rows]),
        lambda_max=np.array([r[2] for r in rows]),
        sensors=np.array([r[0] for r in rows]),
        failed=np.array([r[3] for r in rows], dtype=bool),
        burn_in=burn_in,
        seed=seed,
        P_star=P_star,
        matrices=mats,
    )


class EmpiricalCDF:
    """Right-continuous step CDF of a sample."""

    def __init__(self, samples):
        x = np.sort(np.asarray(samples, dtype=float))
        if x.size == 0:
            raise ValueError("empirical CDF of an empty sample")
        self.x = x

    def __call__(self, t):
        return np.searchsorted(self.x, t, side="right") / self.x.size

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        idx = np.clip(np.ceil(p * self.x.size).astype(int) - 1, 0, self.x.size - 1)
        return self.x[idx]


def empirical_cdf(measure, which="trace", normalized=True):
    if isinstance(measure, EmpiricalMeasure):
        return EmpiricalCDF(measure.values(which, normalized))
    return EmpiricalCDF(measure)


@dataclass(frozen=True)
class RareEvent:
    """Complement of the open ball ``|stat - center| < radius``."""

    statistic: str
    center: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("rare-event radius must be > 0")
        if self.statistic not in STATISTICS:
            raise ValueError(f"unknown statistic {self.statistic!r}")

    @classmethod
    def relative(cls, which, P_star, fraction=0.5):
        c = statistic(P_star, which)
        return cls(which, c, fraction * c)

    def contains(self, value, closure=None):
        """Membership of a scalar value; ``closure`` is None, 'closed' or 'open'."""
        d = abs(value - self.center)
        if closure == "closed":
            return d >= self.radius - DELTA_SET * max(1.0, abs(self.radius))
        if closure == "open":
            return d > self.radius + DELTA_SET * max(1.0, abs(self.radius))
        return d >= self.radius


@dataclass
class RareEventEstimate:
    p_hat: float
    ci_lo: float
    ci_hi: float
    count: int
    n: int

    @property
    def sigma(self):
        return math.sqrt(self.p_hat * (1 - self.p_hat) / self.n) if self.n else math.inf


def wilson_interval(count, n, z=1.959963984540054):
    if n == 0:
        return 0.0, 1.0
    p = count / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if count == 0 else max(0.0, centre - half)
    hi = 1.0 if count == n else min(1.0, centre + half)
    return lo, hi


def rare_event_probability(samples, event):
    if isinstance(samples, EmpiricalMeasure):
        samples = samples.values(event.statistic)
    samples = np.asarray(samples, dtype=float)
    hits = np.abs(samples - event.center) >= event.radius
    count, n = int(hits.sum()), int(samples.size)
    lo, hi = wilson_interval(count, n)
    return RareEventEstimate(count / n if n else 0.0, lo, hi, count, n)


@dataclass
class ExponentEstimate:
    gamma_bar: float
    exponent: float
    ci_lo: float
    ci_hi: float
    sigma: float
    censored: bool


def ld_exponent_estimate(gamma_grid, estimates):
    """``(1/gamma) ln p`` per grid point; zero-count points are censored."""
    out = []
    for g, est in zip(gamma_grid, estimates):
        if est.count == 0:
            out.append(ExponentEstimate(g, -math.inf, -math.inf, math.log(est.ci_hi) / g if est.ci_hi > 0
                                        else -math.inf, math.inf, True))
            continue
        p = est.p_hat
        sig = est.sigma / (p * g)
        lo = math.log(est.ci_lo) / g if est.ci_lo > 0 else -math.inf
        out.append(ExponentEstimate(g, math.log(p) / g, lo, math.log(est.ci_hi) / g, sig, False))
    return out


@dataclass
class LDBounds:
    upper_exponent: float
    lower_exponent: float
    upper_search: object
    lower_search: object
    alpha: float
    beta: float
    L: int

    @property
    def capped(self):
        return bool(self.upper_search.capped or self.lower_search.capped)


def ld_bounds(scenario, event, P_star=None, L=None, max_len=4, max_subsets_per_step=None,
              max_expansions=200_000, path_graph="maximal"):
    """Upper and lower LD exponents for a scalar rare event by string search.

    The upper bound searches the closed event set with the upper weights,
    the lower bound the open event set with the lower weights.
    ``path_graph`` picks which graph the weight paths follow: the maximal
    adjacency or the support of the mean matching.
    """
    system, suite = scenario.system, scenario.suite
    if P_star is None:
        P_star = centralized_fixed_point(system, suite)
    chain = dissemination_chain(scenario.topology)
    if L is None:
        L, alpha, beta = default_hitting_horizon(chain)
    else:
        alpha, beta = hitting_constants(chain, L)
    table = weight_table(alpha, beta, L, suite.N)
    if path_graph == "maximal":
        adj = scenario.topology.adjacency
    elif path_graph == "mean":
        adj = (scenario.mean_adjacency > 0).astype(int)
    else:
        raise ValueError(f"unknown path graph {path_graph!r}")

    def pred(closure):
        return lambda X: event.contains(statistic(X, event.statistic), closure)

    kw = dict(max_len=max_len, max_subsets_per_step=max_subsets_per_step, max_expansions=max_expansions)
    up = best_first_search(pred("closed"), P_star, table, adj, system, suite, which="upper", **kw)
    lo = best_first_search(pred("open"), P_star, table, adj, system, suite, which="lower", **kw)
    res = LDBounds(-up.value, -lo.value, up, lo, alpha, beta, L)
    if not res.lower_exponent <= res.upper_exponent + 1e-12:
        raise AssertionError(f"bound ordering violated: lower {res.lower_exponent} > upper {res.upper_exponent}")
    return res


def sandwich_ok(est, bounds, n_sigma=2.0):
    """Whether an uncensored exponent lies inside the bound band, widened by ``n_sigma``."""
    if est.censored:
        return True
    slack = n_sigma * est.sigma
    return bounds.lower_exponent - slack <= est.exponent <= bounds.upper_exponent + slack


@dataclass
class DiracReport:
    gamma_bar: list
    median: list
    p90: list
    monotone: bool
    strictly_decreasing: bool


def dirac_convergence_report(measures, tol=0.0):
    """Median and 90th percentile of ``|Tr/Tr(P*) - 1|`` along the grid."""
    if len(measures) < 2:
        raise ValueError("need at least two grid points")
    ms = sorted(measures, key=lambda m: m.gamma_bar)
    med, p90 = [], []
    for m in ms:
        dev = np.abs(m.values("trace", normalized=True) - 1)
        med.append(float(np.median(dev)))
        p90.append(float(np.quantile(dev, 0.9)))
    diffs = np.diff(med)
    return DiracReport(
        gamma_bar=[m.gamma_bar for m in ms],
        median=med,
        p90=p90,
        monotone=bool(np.all(diffs <= tol)),
        strictly_decreasing=bool(np.all(diffs < 0)),
    )
