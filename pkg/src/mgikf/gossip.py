"""Observation dissemination by random pairwise swaps within one epoch.

Each epoch draws a Poisson number of link activations; every activation
swaps the observations held at the two ends of a uniformly chosen edge.
A sensor ends the epoch knowing every observation index that passed
through it.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np


def sample_message_count(gamma_bar, rng):
    if gamma_bar < 0:
        raise ValueError(f"gamma_bar must be >= 0, got {gamma_bar}")
    if gamma_bar == 0:
        return 0
    return int(rng.poisson(gamma_bar))


@dataclass
class DisseminationRound:
    message_count: int
    activations: np.ndarray  # (count, 2) 0-based edge ends
    index_sets: np.ndarray  # (N,) subset bitmasks
    trace: np.ndarray = None  # (count + 1, N) when audited
    no_links: bool = False


def run_dissemination(topology, gamma_bar, rng, audit=False, activations=None):
    """One epoch of the swap protocol.

    ``activations`` forces a specific edge sequence (0-based pairs) instead
    of drawing one; no randomness is consumed in that case.
    """
    N = topology.N
    edges = np.array(topology.edges, dtype=int).reshape(-1, 2)
    no_links = False
    if activations is None:
        count = sample_message_count(gamma_bar, rng)
        if count and len(edges) == 0:
            no_links = True
            act = np.zeros((0, 2), dtype=int)
        else:
            act = edges[rng.integers(len(edges), size=count)] if count else np.zeros((0, 2), dtype=int)
    else:
        act = np.asarray(activations, dtype=int).reshape(-1, 2)
        count = len(act)

    s = np.arange(N)
    masks = np.left_shift(1, s)
    full = (1 << N) - 1
    trace = None
    if audit:
        trace = np.empty((len(act) + 1, N), dtype=int)
        trace[0] = s
    for i, (u, v) in enumerate(act):
        s[u], s[v] = s[v], s[u]
        masks[u] |= 1 << s[u]
        masks[v] |= 1 << s[v]
        if audit:
            trace[i + 1] = s
        elif (masks == full).all():
            break
    return DisseminationRound(count, act, masks, trace, no_links)


def sets_from_trace(trace):
    """Union of observation indices seen at each position along an s-trace."""
    masks = np.zeros(trace.shape[1], dtype=int)
    for row in trace:
        masks |= np.left_shift(1, row)
    return masks


def write_trace_csv(rounds, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "step", "position", "observation_index"])
        for r, rnd in enumerate(rounds):
            if rnd.trace is None:
                raise ValueError(f"round {r} was not run with audit=True")
            for step, row in enumerate(rnd.trace):
                for pos, obs in enumerate(row):
                    w.writerow([r, step, pos + 1, int(obs) + 1])


def dissemination_batch(topology, gamma_bar, trials, rng):
    """Vectorised rounds: returns ``(masks (trials, N), counts (trials,))``."""
    N = topology.N
    edges = np.array(topology.edges, dtype=int).reshape(-1, 2)
    counts = rng.poisson(gamma_bar, size=trials) if gamma_bar > 0 else np.zeros(trials, dtype=int)
    s = np.tile(np.arange(N), (trials, 1))
    masks = np.left_shift(1, s)
    if len(edges) == 0:
        return masks, counts
    rows = np.arange(trials)
    for i in range(int(counts.max(initial=0))):
        live = rows[counts > i]
        e = edges[rng.integers(len(edges), size=len(live))]
        u, v = e[:, 0], e[:, 1]
        su, sv = s[live, u], s[live, v]
        s[live, u], s[live, v] = sv, su
        masks[live, u] |= np.left_shift(1, sv)
        masks[live, v] |= np.left_shift(1, su)
    return masks, counts


@dataclass
class EmpiricalQ:
    counts: np.ndarray  # (N, 2**N)
    trials: int

    @property
    def q(self):
        return self.counts / self.trials

    def full_set(self):
        return self.q[:, -1]

    def sigma(self):
        p = self.q
        return np.sqrt(p * (1 - p) / self.trials)


def estimate_q(topology, gamma_bar, trials, rng):
    if trials < 1:
        raise ValueError("trials must be >= 1")
    N = topology.N
    masks, _ = dissemination_batch(topology, gamma_bar, trials, rng)
    counts = np.zeros((N, 1 << N), dtype=np.int64)
    for n in range(N):
        counts[n] = np.bincount(masks[:, n], minlength=1 << N)
    return EmpiricalQ(counts, trials)


@dataclass
class ExponentPoint:
    gamma_bar: float
    q_hat: float
    exponent: float
    sigma: float


def exponent_estimate(topology, gamma_grid, j, n, trials, rng):
    """``(1/gamma) ln q_hat_n(j)`` along a grid; ``-inf`` where nothing was observed."""
    full = (1 << topology.N) - 1
    if j == full:
        raise ValueError("exponent bounds only concern subsets other than the full set")
    out = []
    for g in gamma_grid:
        if g <= 0:
            raise ValueError("gamma grid must be strictly positive")
        est = estimate_q(topology, g, trials, rng)
        p = float(est.q[n, j])
        if p == 0:
            out.append(ExponentPoint(g, 0.0, -math.inf, math.inf))
            continue
        sig = math.sqrt(p * (1 - p) / trials) / (p * g)
        out.append(ExponentPoint(g, p, math.log(p) / g, sig))
    return out
