"""GIKF and M-GIKF epoch loops with the switched-particle bookkeeping."""

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InvariantViolation
from .gossip import run_dissemination
from .model import psd_sqrt
from .riccati import riccati_op


@dataclass(frozen=True, eq=False)
class SensorState:
    x: np.ndarray
    P: np.ndarray


@dataclass(frozen=True, eq=False)
class FilterEnsemble:
    """Per-sensor states plus particle bookkeeping.

    ``perm[n]`` is the sensor currently holding particle ``n``; when
    ``particles`` is not None it is advanced independently of ``P`` and
    must satisfy ``particles[n] == P[perm[n]]`` bit for bit.
    """

    x: np.ndarray  # (N, M)
    P: np.ndarray  # (N, M, M)
    perm: np.ndarray
    particles: np.ndarray = None
    k: int = 0
    last_sets: np.ndarray = None

    @property
    def N(self):
        return self.P.shape[0]

    def state(self, n):
        return SensorState(self.x[n], self.P[n])


def initial_ensemble(system, N, x0_hat=None, track_particles=True):
    M = system.M
    x0 = np.zeros(M) if x0_hat is None else np.asarray(x0_hat, dtype=float)
    P = np.repeat(system.P0[None], N, axis=0)
    return FilterEnsemble(
        x=np.repeat(x0[None], N, axis=0),
        P=P,
        perm=np.arange(N),
        particles=P.copy() if track_particles else None,
    )


def swap_states(ensemble, partner):
    partner = np.asarray(partner)
    N = ensemble.N
    if partner.shape != (N,) or not np.array_equal(partner[partner], np.arange(N)):
        raise ValueError(f"not a matching: {partner.tolist()}")
    return replace(
        ensemble,
        x=ensemble.x[partner],
        P=ensemble.P[partner],
        perm=partner[ensemble.perm],
    )


def covariance_update(system, suite, P, j):
    if j == 0:
        raise ValueError("a sensor always holds its own observation; empty index set rejected")
    return riccati_op(system, suite, j, P)


def estimate_update(system, suite, state, y, j):
    """Kalman predictor step conditioning on the stacked observations of subset ``j``."""
    F = system.F
    x, P = state.x, state.P
    C, R = suite.stacked(j)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != C.shape[0]:
        raise ValueError(f"observation length {y.shape[0]} does not match subset stacking ({C.shape[0]} rows)")
    P_next = riccati_op(system, suite, j, P)
    if C.shape[0] == 0:
        return SensorState(F @ x, P_next)
    cf = cho_factor(C @ P @ C.T + R, lower=True, check_finite=False)
    innov = y - C @ x
    x_next = F @ x + (C @ P @ F.T).T @ cho_solve(cf, innov, check_finite=False)
    return SensorState(x_next, P_next)


def observe_all(suite, x, rng):
    """Stacked observations of every sensor from a shared truth state."""
    C, R = suite.stacked(suite.full)
    L = np.linalg.cholesky(R)
    return C @ x + L @ rng.standard_normal(C.shape[0])


def _advance(ensemble, system, suite, sets, y_all, with_estimates, check_every):
    N = ensemble.N
    P_new = np.empty_like(ensemble.P)
    x_new = ensemble.x.copy()
    for n in range(N):
        j = int(sets[n])
        if with_estimates:
            st = estimate_update(system, suite, ensemble.state(n), y_all[suite.rows(j)], j)
            x_new[n], P_new[n] = st.x, st.P
        else:
            P_new[n] = covariance_update(system, suite, ensemble.P[n], j)
    particles = None
    if ensemble.particles is not None:
        particles = np.empty_like(ensemble.particles)
        for n in range(N):
            particles[n] = riccati_op(system, suite, int(sets[ensemble.perm[n]]), ensemble.particles[n])
    out = replace(ensemble, x=x_new, P=P_new, particles=particles, k=ensemble.k + 1,
                  last_sets=np.asarray(sets))
    if particles is not None and check_every and out.k % check_every == 0:
        check_particles(out)
    return out


def check_particles(ensemble):
    if ensemble.particles is None:
        return
    if not np.array_equal(ensemble.particles, ensemble.P[ensemble.perm]):
        bad = [n for n in range(ensemble.N)
               if not np.array_equal(ensemble.particles[n], ensemble.P[ensemble.perm[n]])]
        raise InvariantViolation(f"particle/sensor covariance mismatch at epoch {ensemble.k} for particles {bad}")


def step_mgikf(ensemble, system, suite, topology, dist, gamma_bar, x_true, streams,
               with_estimates=True, check_every=1):
    """One epoch: swap states, observe, disseminate, update every sensor."""
    partner = dist.sample(streams.swap)
    ens = swap_states(ensemble, partner)
    y_all = observe_all(suite, x_true, streams.noise) if with_estimates else None
    rnd = run_dissemination(topology, gamma_bar, streams.dissemination)
    return _advance(ens, system, suite, rnd.index_sets, y_all, with_estimates, check_every)


def step_gikf(ensemble, system, suite, topology, dist, x_true, streams, with_estimates=True, check_every=1):
    """Baseline where every sensor updates with its own observation only."""
    partner = dist.sample(streams.swap)
    ens = swap_states(ensemble, partner)
    y_all = observe_all(suite, x_true, streams.noise) if with_estimates else None
    sets = np.left_shift(1, np.arange(ens.N))
    return _advance(ens, system, suite, sets, y_all, with_estimates, check_every)


def centralized_step(system, suite, state, y_all):
    return estimate_update(system, suite, state, y_all, suite.full)


@dataclass
class RunRecord:
    epoch: int
    x_true: np.ndarray
    ensemble: FilterEnsemble


def run_filter(system, suite, topology, dist, gamma_bar, epochs, streams, mode="mgikf",
               track_particles=True, check_every=1):
    """Drive one filter run against a shared truth trajectory; yields a record per epoch.

    The record for epoch ``k`` holds ``x_k`` and the ensemble predicting it.
    """
    G = psd_sqrt(system.Q)
    x = psd_sqrt(system.P0) @ streams.init.standard_normal(system.M)
    ens = initial_ensemble(system, suite.N, track_particles=track_particles)
    yield RunRecord(0, x, ens)
    for k in range(epochs):
        if mode == "mgikf":
            ens = step_mgikf(ens, system, suite, topology, dist, gamma_bar, x, streams, check_every=check_every)
        elif mode == "gikf":
            ens = step_gikf(ens, system, suite, topology, dist, x, streams, check_every=check_every)
        else:
            raise ValueError(f"unknown filter mode {mode!r}")
        x = system.F @ x + G @ streams.noise.standard_normal(system.M)
        yield RunRecord(k + 1, x, ens)


def write_run_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "sensor", "trace_P", "lambda_max_P", "err_norm"])
        for rec in records:
            ens = rec.ensemble
            for n in range(ens.N):
                P = ens.P[n]
                w.writerow([rec.epoch, n + 1, repr(float(np.trace(P))),
                            repr(float(np.linalg.eigvalsh(P)[-1])),
                            repr(float(np.linalg.norm(ens.x[n] - rec.x_true)))])


def run_auxiliary_sequence(system, suite, topology, mean_adj, gamma_bar, P0, k_max, streams):
    """Stationary switching chain and its Riccati iterates.

    Returns ``(covs (k_max+1, M, M), z (k_max+1,))``.
    """
    N = suite.N
    A = np.asarray(mean_adj, dtype=float)
    cdf = np.cumsum(A, axis=1)
    z = np.empty(k_max + 1, dtype=int)
    z[0] = streams.init.integers(N)
    covs = np.empty((k_max + 1, system.M, system.M))
    covs[0] = P0
    for k in range(k_max):
        rnd = run_dissemination(topology, gamma_bar, streams.dissemination)
        covs[k + 1] = riccati_op(system, suite, int(rnd.index_sets[z[k]]), covs[k])
        u = streams.swap.random()
        z[k + 1] = min(int(np.searchsorted(cdf[z[k]], u, side="right")), N - 1)
    return covs, z
