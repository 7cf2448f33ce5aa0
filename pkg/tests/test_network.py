import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgikf.errors import ConfigurationError
from mgikf.network import (GossipTopology, MatchingDistribution, check_irreducible_aperiodic,
                           default_hitting_horizon, default_matching_distribution, dissemination_chain,
                           hitting_constants, hitting_tail, maximal_matchings, mean_adjacency, q_exponent_bounds,
                           weight_table)


def swap(N, u, v):
    p = np.arange(N)
    p[u], p[v] = v, u
    return p


def test_adjacency_has_self_loops_and_symmetry():
    for t in (GossipTopology.complete(4), GossipTopology.path(4), GossipTopology.ring(5)):
        A = t.adjacency
        assert np.array_equal(A, A.T) and np.all(np.diag(A) == 1)
        for u in range(t.N):
            for v in range(t.N):
                if u != v:
                    assert A[u, v] == ((min(u, v), max(u, v)) in t.edges)


def test_graph_text_roundtrip_and_errors():
    t = GossipTopology.parse("4\n1 2\n2 3\n# comment\n3 4\n")
    assert t.edges == ((0, 1), (1, 2), (2, 3))
    assert GossipTopology.parse(t.dumps()).edges == t.edges
    for bad in ("", "3\n1 4\n", "3\n1\n", "x\n"):
        with pytest.raises(ConfigurationError):
            GossipTopology.parse(bad)


def test_identity_support_always_identity():
    t = GossipTopology.complete(3)
    d = MatchingDistribution(t, (np.arange(3),), [1.0])
    rng = np.random.default_rng(0)
    assert all(np.array_equal(d.sample(rng), np.arange(3)) for _ in range(100))
    assert np.array_equal(mean_adjacency(d), np.eye(3))


def test_two_node_frequency_and_mean():
    t = GossipTopology.path(2)
    d = MatchingDistribution(t, (np.arange(2), swap(2, 0, 1)), [0.5, 0.5])
    draws = d.sample_many(np.random.default_rng(1), 10_000)
    assert abs((draws[:, 0] == 1).mean() - 0.5) <= 0.02
    assert np.allclose(mean_adjacency(d), [[0.5, 0.5], [0.5, 0.5]])


def test_triangle_mean_by_direct_summation():
    t = GossipTopology.complete(3)
    support = (swap(3, 0, 1), swap(3, 1, 2), swap(3, 0, 2))
    d = MatchingDistribution(t, support, np.full(3, 1 / 3))
    want = np.zeros((3, 3))
    for p in support:
        for n in range(3):
            want[n, p[n]] += 1 / 3
    assert np.allclose(mean_adjacency(d), want)
    assert np.allclose(want, np.full((3, 3), 1 / 3))


def test_matching_validation():
    t = GossipTopology.path(3)
    with pytest.raises(ConfigurationError):
        MatchingDistribution(t, (swap(3, 0, 2),), [1.0])  # edge outside the graph
    with pytest.raises(ConfigurationError):
        MatchingDistribution(t, (np.array([1, 2, 0]),), [1.0])  # 3-cycle, not an involution
    with pytest.raises(ConfigurationError):
        MatchingDistribution(t, (np.arange(3),), [0.9])
    with pytest.raises(ConfigurationError):
        MatchingDistribution(t, (), [])


@pytest.mark.parametrize("topo", [GossipTopology.ring(5), GossipTopology.path(4), GossipTopology.complete(4)])
def test_sampled_matchings_are_perfect_with_self_loops(topo):
    d = default_matching_distribution(topo, laziness=0.2)
    rng = np.random.default_rng(2)
    draws = d.sample_many(rng, 100_000)
    I = np.eye(topo.N)
    emp = np.zeros((topo.N, topo.N))
    for p in d.support:
        A = I[p]
        assert np.array_equal(A, A.T) and np.array_equal(A @ A, I) and np.all(A.sum(axis=1) == 1)
    for n in range(topo.N):
        emp[n] = np.bincount(draws[:, n], minlength=topo.N) / len(draws)
    Abar = mean_adjacency(d)
    assert np.abs(emp - Abar).max() <= 0.01
    assert np.allclose(Abar.sum(axis=0), 1, atol=1e-12) and np.allclose(Abar.sum(axis=1), 1, atol=1e-12)


def test_maximal_matchings_are_maximal():
    t = GossipTopology.ring(6)
    for p in maximal_matchings(t):
        free = [n for n in range(6) if p[n] == n]
        assert not any((min(u, v), max(u, v)) in t.edges for u in free for v in free if u != v)


def test_irreducible_aperiodic_examples():
    assert not check_irreducible_aperiodic(np.eye(2)).ok
    assert check_irreducible_aperiodic(np.full((2, 2), 0.5)).ok
    rep = check_irreducible_aperiodic(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert rep.irreducible and rep.period == 2 and not rep.ok
    ring4 = np.roll(np.eye(4), 1, axis=1) / 2 + np.roll(np.eye(4), -1, axis=1) / 2
    assert check_irreducible_aperiodic(ring4).period == 2


def tail_mc(P, target, start, k_max, runs, rng):
    """Monte Carlo P(T > k) for k = 0..k_max."""
    cdf = np.cumsum(P, axis=1)
    T = np.full(runs, k_max + 1)
    for r in range(runs):
        s = start
        for k in range(1, k_max + 1):
            s = min(int(np.searchsorted(cdf[s], rng.random(), side="right")), len(P) - 1)
            if s == target:
                T[r] = k
                break
    return np.array([(T > k).mean() for k in range(k_max + 1)])


def test_two_state_geometric_tail():
    P = np.full((2, 2), 0.5)
    tail = hitting_tail(P, 1, 10)
    assert np.allclose(tail[:, 0], 0.5 ** np.arange(11))
    assert np.all(tail[:, 1] == 0)


def test_three_cycle_tail_vs_monte_carlo():
    P = np.full((3, 3), 1 / 3)
    runs = 100_000
    rng = np.random.default_rng(3)
    cdf = np.cumsum(P, axis=1)
    # vectorised simulation of the chain from node 0 to target 2
    s = np.zeros(runs, dtype=int)
    alive = np.ones(runs, dtype=bool)
    exact = hitting_tail(P, 2, 8)[:, 0]
    for k in range(1, 9):
        u = rng.random(runs)
        s = np.minimum((u[:, None] > cdf[s]).sum(axis=1), 2)
        alive &= s != 2
        p = alive.mean()
        sigma = math.sqrt(exact[k] * (1 - exact[k]) / runs)
        assert abs(p - exact[k]) <= 3 * sigma + 1e-12


def test_hitting_constants_two_state():
    P = np.full((2, 2), 0.5)
    assert hitting_constants(P, 1) == pytest.approx((0.5, 0.5))
    assert hitting_constants(P, 3) == pytest.approx((0.125, 0.125))
    with pytest.raises(ConfigurationError):
        hitting_constants(np.eye(2), 1)


def test_hitting_constants_need_alpha_below_one():
    chain = dissemination_chain(GossipTopology.path(4))
    with pytest.raises(ValueError):
        hitting_constants(chain, 1)  # node 4 cannot reach node 1 in one hop
    L, alpha, beta = default_hitting_horizon(chain)
    assert L == 3 and 0 < beta <= alpha < 1


@pytest.mark.parametrize("topo", [GossipTopology.path(3), GossipTopology.ring(5), GossipTopology.complete(4)])
def test_tail_sandwich_on_graphs(topo):
    P = dissemination_chain(topo)
    L, alpha, beta = default_hitting_horizon(P)
    for n in range(topo.N):
        tail = hitting_tail(P, n, 10 * L)
        assert np.all(np.diff(tail, axis=0) <= 1e-15)
        for k in range(1, 11):
            t = np.delete(tail[k * L], n)
            assert np.all(t <= alpha ** k * (1 + 1e-12))
            assert np.all(t >= beta ** k * (1 - 1e-12))


def test_q_bounds_examples():
    assert q_exponent_bounds(0.5, 0.25, 2, 3, 0b001, 0)[0] == pytest.approx(math.log(2) / 2)
    assert q_exponent_bounds(0.5, 0.25, 2, 3, 0b001, 0)[1] == pytest.approx(math.log(4))
    assert q_exponent_bounds(0.5, 0.25, 2, 3, 0b111, 1) == (0.0, 0.0)
    assert q_exponent_bounds(0.5, 0.25, 2, 3, 0b001, 1) == (math.inf, math.inf)
    for a, b in ((1.0, 0.5), (0.5, 0.6), (0.0, 0.0)):
        with pytest.raises(ValueError):
            q_exponent_bounds(a, b, 1, 3, 0b001, 0)


@settings(max_examples=50)
@given(st.floats(0.01, 0.99), st.floats(0.01, 1.0), st.integers(1, 5), st.integers(2, 4))
def test_q_bound_ordering(alpha, frac, L, N):
    beta = alpha * frac
    table = weight_table(alpha, beta, L, N)
    full = (1 << N) - 1
    for n in range(N):
        for j in range(1, full):
            if j >> n & 1:
                assert table.upper[n, j] <= table.lower[n, j] + 1e-12
            else:
                assert math.isinf(table.upper[n, j])


def test_dissemination_chain_complete_three():
    P = dissemination_chain(GossipTopology.complete(3))
    assert np.allclose(P, 1 / 3)
    assert hitting_constants(P, 1) == pytest.approx((2 / 3, 2 / 3))
