"""Subset Riccati operators, the centralized fixed point and string calculus.

A string is the record ``(j_r, ..., j_1, P0)`` of subset operators applied
right-to-left to an initial covariance. Its weights are path-minimised sums
of per-sensor exponent bounds; the rate functions are infima of those
weights over strings landing at (or near) a target covariance.
"""

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import DivergenceError
from .model import subset_members


def _sym(Y):
    return (Y + Y.T) / 2


def riccati_op(system, suite, j, X):
    """One-step predicted covariance using the stacked observations of subset ``j``.

    ``j = 0`` is the Lyapunov map ``F X F' + Q``.
    """
    F = system.F
    FXF = F @ X @ F.T + system.Q
    if j == 0:
        return _sym(FXF)
    C, R = suite.stacked(j)
    S = C @ X @ C.T + R
    try:
        cf = cho_factor(S, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise FloatingPointError(f"innovation covariance not positive definite for subset {j}") from exc
    G = C @ X @ F.T
    return _sym(FXF - G.T @ cho_solve(cf, G, check_finite=False))


def riccati_op_sum_form(system, suite, j, X):
    """Same step written as one correction per member sensor.

    Only equal to :func:`riccati_op` when the stacked innovation matrix is
    block diagonal; kept as an independent cross-check.
    """
    F = system.F
    out = F @ X @ F.T + system.Q
    for n in subset_members(j, suite.N):
        s = suite.sensors[n]
        S = s.C @ X @ s.C.T + s.R
        G = s.C @ X @ F.T
        out = out - G.T @ np.linalg.solve(S, G)
    return _sym(out)


def centralized_fixed_point(system, suite, tol=1e-12, max_iter=100_000, X0=None):
    """Fixed point of the all-sensor Riccati map by plain iteration from Q."""
    full = suite.full
    X = system.Q.copy() if X0 is None else np.array(X0, dtype=float)
    residual = math.inf
    for _ in range(max_iter):
        Xn = riccati_op(system, suite, full, X)
        residual = np.linalg.norm(Xn - X)
        if residual <= tol * (1 + np.linalg.norm(X)):
            return Xn
        X = Xn
    raise DivergenceError(
        f"centralized Riccati iteration did not settle in {max_iter} steps "
        f"(last residual {residual:.3e}); check detectability/stabilizability",
        residual=residual,
    )


@dataclass(frozen=True, eq=False)
class RiccatiString:
    """Operators are stored outermost first: ``subsets[0]`` is applied last."""

    subsets: tuple
    initial: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "subsets", tuple(int(j) for j in self.subsets))

    def __len__(self):
        return len(self.subsets)

    @property
    def applied_order(self):
        return self.subsets[::-1]

    def then(self, *outer):
        """String with extra operators applied after this one (outermost last in args)."""
        return RiccatiString(tuple(reversed(outer)) + self.subsets, self.initial)


def evaluate_string(string, system, suite):
    X = np.array(string.initial, dtype=float)
    for j in string.applied_order:
        X = riccati_op(system, suite, j, X)
    return X


def count_non_centralized(string, N):
    full = (1 << N) - 1
    return sum(1 for j in string.subsets if j != full)


@dataclass
class WeightTable:
    """Per-sensor, per-subset exponent bounds, shape ``(N, 2**N)`` each."""

    upper: np.ndarray
    lower: np.ndarray

    @property
    def N(self):
        return self.upper.shape[0]

    def select(self, which):
        return self.upper if which == "upper" else self.lower


def _path_step(cost, adjacency, col, indicator):
    """Min-plus extension of per-end-node path costs by one string position."""
    if cost is None:
        prev = np.zeros(len(col))
    else:
        masked = np.where(adjacency > 0, cost[:, None], np.inf)
        prev = masked.min(axis=0)
    if not indicator:
        return prev
    with np.errstate(invalid="ignore"):
        out = prev + col
    return np.where(np.isnan(out), np.inf, out)


def string_weights(string, table, adjacency):
    """Upper and lower weights of a string (0 for the empty string)."""
    if len(string) == 0:
        return 0.0, 0.0
    full = (1 << table.N) - 1
    A = np.asarray(adjacency)
    res = []
    for which in ("upper", "lower"):
        q = table.select(which)
        cost = None
        for j in string.applied_order:
            cost = _path_step(cost, A, q[:, j], j != full)
        res.append(float(cost.min()))
    return tuple(res)


@dataclass
class SearchResult:
    value: float
    witness: RiccatiString = None
    witness_value: np.ndarray = None
    capped: bool = False
    expanded: int = 0
    note: str = "upper bound on the infimum: only strings up to max_len were searched"


@dataclass(order=True)
class _Node:
    weight: float
    length: int
    tiebreak: int
    subsets: tuple = field(compare=False)
    X: np.ndarray = field(compare=False)
    cost: np.ndarray = field(compare=False)


def best_first_search(predicate, P_star, table, adjacency, system, suite, which="upper",
                      max_len=4, subsets=None, max_subsets_per_step=None, max_expansions=200_000,
                      dedup_decimals=10):
    """Cheapest string from ``P_star`` whose value satisfies ``predicate``.

    Weights only grow as operators are appended, so popping strings in
    weight order returns the minimum over all strings of length
    <= ``max_len`` built from the allowed subsets. ``capped`` is set when
    the expansion budget ran out or no feasible string was found.
    """
    q = table.select(which)
    N = table.N
    full = (1 << N) - 1
    A = np.asarray(adjacency)
    if subsets is None:
        subsets = [j for j in range(1, 1 << N) if j == full or np.isfinite(q[:, j]).any()]
    subsets = sorted(set(int(j) for j in subsets),
                     key=lambda j: (0.0 if j == full else float(np.min(q[:, j])), j))
    if max_subsets_per_step is not None:
        subsets = subsets[:max_subsets_per_step]

    counter = 0
    heap = [_Node(0.0, 0, counter, (), np.array(P_star, dtype=float), None)]
    seen = {}
    expanded = 0
    while heap:
        node = heapq.heappop(heap)
        if predicate(node.X):
            return SearchResult(node.weight, RiccatiString(node.subsets, P_star), node.X,
                                capped=False, expanded=expanded)
        if node.length >= max_len or not math.isfinite(node.weight):
            continue
        if expanded >= max_expansions:
            return SearchResult(math.inf, capped=True, expanded=expanded)
        expanded += 1
        for j in subsets:
            cost = _path_step(node.cost, A, q[:, j], j != full)
            w = float(cost.min())
            if not math.isfinite(w):
                continue
            X = riccati_op(system, suite, j, node.X)
            key = (np.round(X, dedup_decimals).tobytes(), np.round(cost, 12).tobytes())
            best_len = seen.get(key)
            if best_len is not None and best_len <= node.length + 1:
                continue
            seen[key] = node.length + 1
            counter += 1
            heapq.heappush(heap, _Node(w, node.length + 1, counter, (j,) + node.subsets, X, cost))
    return SearchResult(math.inf, capped=True, expanded=expanded)


def rate_function(X, target_tol, P_star, table, adjacency, system, suite, max_len=4,
                  max_subsets_per_step=None, max_expansions=200_000):
    """Bounded approximations of the upper and lower rate functions at ``X``.

    Returns ``(I_upper, I_lower, (upper_result, lower_result))``. Values are
    upper bounds on the true infima (longer strings are never examined).
    """
    X = np.asarray(X, dtype=float)

    def near(Y):
        return np.linalg.norm(Y - X) <= target_tol

    out = [
        best_first_search(near, P_star, table, adjacency, system, suite, which=w, max_len=max_len,
                          max_subsets_per_step=max_subsets_per_step, max_expansions=max_expansions)
        for w in ("upper", "lower")
    ]
    return out[0].value, out[1].value, tuple(out)
