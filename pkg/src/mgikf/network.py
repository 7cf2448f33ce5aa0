"""Communication graph, matching distribution and hitting-time constants."""

import math
from dataclasses import dataclass
from math import gcd

import numpy as np

from .errors import ConfigurationError
from .model import subset_members


@dataclass(frozen=True, eq=False)
class GossipTopology:
    """Undirected graph on nodes ``0..N-1``; self-loops are implicit."""

    N: int
    edges: tuple

    def __post_init__(self):
        if self.N < 1:
            raise ConfigurationError("a topology needs at least one node")
        clean = set()
        for u, v in self.edges:
            u, v = int(u), int(v)
            if not (0 <= u < self.N and 0 <= v < self.N):
                raise ConfigurationError(f"edge ({u + 1}, {v + 1}) references a node outside 1..{self.N}")
            if u != v:
                clean.add((min(u, v), max(u, v)))
        object.__setattr__(self, "edges", tuple(sorted(clean)))

    @property
    def adjacency(self):
        A = np.eye(self.N, dtype=int)
        for u, v in self.edges:
            A[u, v] = A[v, u] = 1
        return A

    @classmethod
    def complete(cls, N):
        return cls(N, [(u, v) for u in range(N) for v in range(u + 1, N)])

    @classmethod
    def path(cls, N):
        return cls(N, [(u, u + 1) for u in range(N - 1)])

    @classmethod
    def ring(cls, N):
        if N < 3:
            return cls.path(N)
        return cls(N, [(u, (u + 1) % N) for u in range(N)])

    @classmethod
    def parse(cls, text):
        """Node count on the first line, then one ``u v`` (1-based) per line."""
        lines = [ln.split("#")[0].strip() for ln in text.splitlines()]
        lines = [ln for ln in lines if ln]
        if not lines:
            raise ConfigurationError("graph file is empty")
        try:
            N = int(lines[0])
            edges = []
            for i, ln in enumerate(lines[1:], start=2):
                parts = ln.split()
                if len(parts) != 2:
                    raise ConfigurationError(f"graph line {i}: expected 'u v', got {ln!r}")
                edges.append((int(parts[0]) - 1, int(parts[1]) - 1))
        except ValueError as exc:
            raise ConfigurationError(f"graph file: {exc}") from exc
        return cls(N, edges)

    def dumps(self):
        return "\n".join([str(self.N)] + [f"{u + 1} {v + 1}" for u, v in self.edges]) + "\n"


def matching_matrix(partner):
    N = len(partner)
    A = np.zeros((N, N))
    A[np.arange(N), partner] = 1.0
    return A


@dataclass(frozen=True, eq=False)
class MatchingDistribution:
    """Finite distribution over matchings, each given as an involutive partner array."""

    topology: GossipTopology
    support: tuple
    probs: np.ndarray

    def __post_init__(self):
        if len(self.support) == 0:
            raise ConfigurationError("matching distribution has empty support")
        N = self.topology.N
        adj = self.topology.adjacency
        support = []
        for p in self.support:
            p = np.asarray(p, dtype=int)
            if p.shape != (N,) or np.any(p < 0) or np.any(p >= N):
                raise ConfigurationError(f"matching {p.tolist()} is not a permutation of {N} nodes")
            if not np.array_equal(p[p], np.arange(N)):
                raise ConfigurationError(f"matching {(p + 1).tolist()} is not an involution")
            if np.any(adj[np.arange(N), p] == 0):
                bad = [(n + 1, int(p[n]) + 1) for n in range(N) if adj[n, p[n]] == 0]
                raise ConfigurationError(f"matching uses edges outside the graph: {bad}")
            support.append(p)
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (len(support),) or np.any(probs < 0):
            raise ConfigurationError("matching probabilities must be nonnegative, one per matching")
        if abs(probs.sum() - 1) > 1e-12:
            raise ConfigurationError(f"matching probabilities sum to {probs.sum()!r}, not 1")
        object.__setattr__(self, "support", tuple(support))
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_table", np.stack(support))

    def sample(self, rng):
        return self.support[int(rng.choice(len(self.support), p=self.probs))]

    def sample_many(self, rng, size):
        """Partner arrays for ``size`` epochs, shape ``(size, N)``."""
        idx = rng.choice(len(self.support), size=size, p=self.probs)
        return self._table[idx]


def sample_matching(dist, rng):
    return dist.sample(rng)


def maximal_matchings(topology, rng=None, tries=2000):
    """Distinct maximal matchings found by a randomized greedy matcher."""
    rng = np.random.default_rng(0) if rng is None else rng
    N = topology.N
    edges = np.array(topology.edges, dtype=int).reshape(-1, 2)
    found = {}
    for _ in range(tries):
        partner = np.arange(N)
        for e in rng.permutation(len(edges)):
            u, v = edges[e]
            if partner[u] == u and partner[v] == v:
                partner[u], partner[v] = v, u
        found[partner.tobytes()] = partner
    return [found[k] for k in sorted(found)]


def default_matching_distribution(topology, laziness=0.0, rng=None):
    """Uniform over greedy maximal matchings, optionally mixed with the identity."""
    support = maximal_matchings(topology, rng)
    probs = np.full(len(support), (1.0 - laziness) / len(support))
    identity = np.arange(topology.N)
    if laziness > 0:
        if any(np.array_equal(p, identity) for p in support):
            probs[[np.array_equal(p, identity) for p in support]] += laziness
        else:
            support.append(identity)
            probs = np.append(probs, laziness)
    probs = probs / probs.sum()
    return MatchingDistribution(topology, tuple(support), probs)


def mean_adjacency(dist):
    return sum(p * matching_matrix(m) for p, m in zip(dist.probs, dist.support))


def dissemination_chain(topology):
    """Transition matrix of one observation hop: a uniformly chosen edge swaps its ends."""
    N = topology.N
    if not topology.edges:
        return np.eye(N)
    P = np.zeros((N, N))
    for u, v in topology.edges:
        E = np.eye(N)
        E[[u, v]] = E[[v, u]]
        P += E
    return P / len(topology.edges)


@dataclass
class ChainReport:
    irreducible: bool
    period: int
    detail: str = ""

    @property
    def ok(self):
        return self.irreducible and self.period == 1

    def __bool__(self):
        return self.ok


def _reachable(P, start):
    seen, stack = {start}, [start]
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(P[u] > 0):
            if v not in seen:
                seen.add(int(v))
                stack.append(int(v))
    return seen


def check_irreducible_aperiodic(P):
    """Irreducibility via strong connectivity; period via BFS level differences."""
    P = np.asarray(P)
    N = P.shape[0]
    fwd = _reachable(P, 0)
    bwd = _reachable(P.T, 0)
    if len(fwd) < N or len(bwd) < N:
        missing = sorted(set(range(N)) - (fwd & bwd))
        return ChainReport(False, 0, f"nodes {[m + 1 for m in missing]} not strongly connected to node 1")
    level = {0: 0}
    order = [0]
    for u in order:
        for v in np.flatnonzero(P[u] > 0):
            if int(v) not in level:
                level[int(v)] = level[u] + 1
                order.append(int(v))
    g = 0
    for u in range(N):
        for v in np.flatnonzero(P[u] > 0):
            g = gcd(g, level[u] + 1 - level[int(v)])
    g = abs(g)
    detail = "ok" if g == 1 else f"chain has period {g}"
    return ChainReport(True, g, detail)


def hitting_tail(P, target, k_max):
    """``tail[k, i] = P(T_i > k)`` for hitting ``target``; ``tail[:, target] = 0``."""
    P = np.asarray(P, dtype=float)
    N = P.shape[0]
    keep = np.ones(N, dtype=bool)
    keep[target] = False
    sub = P[np.ix_(keep, keep)]
    tail = np.zeros((k_max + 1, N))
    cur = np.ones(keep.sum())
    tail[0, keep] = cur
    for k in range(1, k_max + 1):
        cur = sub @ cur
        tail[k, keep] = cur
    return tail


def hitting_constants(P, L):
    """``(alpha, beta)``: max and min of ``P(T_i > L)`` over targets and starts ``i != target``."""
    P = np.asarray(P, dtype=float)
    N = P.shape[0]
    if N == 1:
        return 0.0, 0.0
    report = check_irreducible_aperiodic(P)
    if not report.irreducible:
        raise ConfigurationError(f"hitting constants need an irreducible chain: {report.detail}")
    vals = []
    for n in range(N):
        t = hitting_tail(P, n, L)[L]
        vals.extend(t[i] for i in range(N) if i != n)
    alpha, beta = float(max(vals)), float(min(vals))
    if alpha >= 1.0:
        raise ValueError(f"alpha = {alpha:.6g} >= 1 at L={L}; choose a larger L")
    return alpha, beta


def default_hitting_horizon(P, max_L=None):
    N = np.asarray(P).shape[0]
    max_L = 10 * N if max_L is None else max_L
    for L in range(1, max_L + 1):
        try:
            alpha, beta = hitting_constants(P, L)
        except ValueError:
            continue
        return L, alpha, beta
    raise ValueError(f"no L <= {max_L} gives alpha < 1")


def q_exponent_bounds(alpha, beta, L, N, j, n):
    """``(q_upper, q_lower)`` exponent bounds for sensor ``n`` receiving exactly subset ``j``."""
    full = (1 << N) - 1
    members = subset_members(j, N)
    if n not in members:
        return math.inf, math.inf
    if j == full:
        # excluded by the weight indicator; zero contribution
        return 0.0, 0.0
    if not (0 < alpha < 1) or not (0 < beta <= alpha):
        raise ValueError(f"need 0 < beta <= alpha < 1, got alpha={alpha}, beta={beta}")
    m = len(members)
    return -math.log(alpha) / L, (N - m) * -math.log(beta) / L


def weight_table(alpha, beta, L, N):
    from .riccati import WeightTable

    up = np.empty((N, 1 << N))
    lo = np.empty((N, 1 << N))
    for n in range(N):
        for j in range(1 << N):
            up[n, j], lo[n, j] = q_exponent_bounds(alpha, beta, L, N, j, n)
    return WeightTable(up, lo)
