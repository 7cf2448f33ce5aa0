"""Linear signal/observation model, subset stacking and structural checks."""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import block_diag

from .errors import ConfigurationError

TOL_PSD = 1e-9
TOL_PD = 1e-12
TOL_RANK = 1e-9


def _as_matrix(a, name):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2:
        raise ConfigurationError(f"{name} must be a matrix, got shape {a.shape}")
    return a


def psd_sqrt(Q):
    """Symmetric square root, clamping tiny negative eigenvalues to zero."""
    w, V = np.linalg.eigh((Q + Q.T) / 2)
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def is_psd(X, tol=TOL_PSD):
    w = np.linalg.eigvalsh((X + X.T) / 2)
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    return bool(w.size == 0 or w.min() >= -tol * scale)


def cholesky_pd(R, tol=TOL_PD):
    """Cholesky factor of R, or None when a pivot falls at or below ``tol``."""
    try:
        L = np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        return None
    if np.any(np.diag(L) ** 2 <= tol):
        return None
    return L


@dataclass(frozen=True, eq=False)
class LinearSystem:
    F: np.ndarray
    Q: np.ndarray
    dt: float = 1.0
    P0: np.ndarray = None

    def __post_init__(self):
        F = _as_matrix(self.F, "F")
        Q = _as_matrix(self.Q, "Q")
        if F.shape[0] != F.shape[1]:
            raise ConfigurationError(f"F must be square, got {F.shape}")
        if Q.shape != F.shape:
            raise ConfigurationError(f"Q shape {Q.shape} does not match F {F.shape}")
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-10 * max(1.0, np.abs(Q).max())):
            raise ConfigurationError("Q must be symmetric")
        if not is_psd(Q):
            raise ConfigurationError("Q must be positive semidefinite")
        if not self.dt > 0:
            raise ConfigurationError("sampling interval must be positive")
        P0 = np.eye(F.shape[0]) if self.P0 is None else _as_matrix(self.P0, "P0")
        if P0.shape != F.shape or not is_psd(P0):
            raise ConfigurationError("P0 must be an M x M PSD matrix")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Q", (Q + Q.T) / 2)
        object.__setattr__(self, "P0", (P0 + P0.T) / 2)

    @property
    def M(self):
        return self.F.shape[0]


@dataclass(frozen=True, eq=False)
class Sensor:
    C: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        C = _as_matrix(self.C, "C")
        R = _as_matrix(self.R, "R")
        if R.shape != (C.shape[0], C.shape[0]):
            raise ConfigurationError(f"R shape {R.shape} does not match {C.shape[0]} observation rows")
        if not np.allclose(R, R.T, rtol=0, atol=1e-10 * max(1.0, np.abs(R).max())):
            raise ConfigurationError("R must be symmetric")
        if cholesky_pd(R) is None:
            raise ConfigurationError("R must be positive definite")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "R", (R + R.T) / 2)

    @property
    def obs_dim(self):
        return self.C.shape[0]


# Subset indices are plain ints used as bitmasks: bit n-1 <-> sensor n.

def subset_members(j, N):
    """Sensors (0-based, ascending) contained in subset index ``j``."""
    if not 0 <= j < (1 << N):
        raise ConfigurationError(f"subset index {j} out of range for N={N}")
    return [n for n in range(N) if j >> n & 1]


def subset_index(members):
    j = 0
    for n in members:
        j |= 1 << int(n)
    return j


def full_subset(N):
    return (1 << N) - 1


@dataclass(frozen=True, eq=False)
class SensorSuite:
    sensors: tuple
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        sensors = tuple(self.sensors)
        if not sensors:
            raise ConfigurationError("a sensor suite needs at least one sensor")
        cols = {s.C.shape[1] for s in sensors}
        if len(cols) != 1:
            raise ConfigurationError(f"sensor C matrices disagree on state dimension: {sorted(cols)}")
        object.__setattr__(self, "sensors", sensors)

    @property
    def N(self):
        return len(self.sensors)

    @property
    def M(self):
        return self.sensors[0].C.shape[1]

    @property
    def full(self):
        return full_subset(self.N)

    @cached_property
    def obs_offsets(self):
        return np.concatenate([[0], np.cumsum([s.obs_dim for s in self.sensors])])

    def check_against(self, system):
        if self.M != system.M:
            raise ConfigurationError(f"sensors observe dimension {self.M}, system has M={system.M}")

    def stacked(self, j):
        """Cached ``(C_j, R_j)`` for subset ``j``."""
        hit = self._cache.get(j)
        if hit is None:
            hit = stack_subset(self, j)
            self._cache[j] = hit
        return hit

    def rows(self, j):
        """Row indices of the all-sensor observation vector that belong to subset ``j``."""
        off = self.obs_offsets
        idx = [np.arange(off[n], off[n + 1]) for n in subset_members(j, self.N)]
        return np.concatenate(idx) if idx else np.zeros(0, dtype=int)


def stack_subset(suite, j):
    members = subset_members(j, suite.N)
    if not members:
        return np.zeros((0, suite.M)), np.zeros((0, 0))
    C = np.vstack([suite.sensors[n].C for n in members])
    R = block_diag(*[suite.sensors[n].R for n in members])
    return C, R


@dataclass
class CheckReport:
    ok: bool
    path: str
    detail: str = ""

    def __bool__(self):
        return self.ok


def check_stabilizability(system):
    """Stabilizability of (F, Q^{1/2}).

    Positive definite Q decides immediately; otherwise a PBH rank test is
    run on every eigenvalue with modulus >= 1.
    """
    M = system.M
    if cholesky_pd(system.Q) is not None:
        return CheckReport(True, "positive-definite-Q", "Q is positive definite")
    G = psd_sqrt(system.Q)
    for lam in np.linalg.eigvals(system.F):
        if abs(lam) < 1 - 1e-12:
            continue
        pencil = np.hstack([system.F - lam * np.eye(M), G])
        s = np.linalg.svd(pencil, compute_uv=False)
        rank = int(np.sum(s > TOL_RANK * max(1.0, s[0])))
        if rank < M:
            return CheckReport(False, "pbh", f"uncontrollable mode at eigenvalue {lam:.6g} (rank {rank} < {M})")
    return CheckReport(True, "pbh", "all modes with |lambda| >= 1 are reachable from the noise")


@dataclass
class DetectabilityResult:
    satisfied: bool
    walk: tuple = None  # 0-based node sequence
    sigma_min: float = 0.0
    detail: str = ""

    @property
    def status(self):
        return "satisfied" if self.satisfied else "inconclusive"


def walk_gramian(system, suite, walk):
    M = system.M
    G = np.zeros((M, M))
    Fp = np.eye(M)
    for n in walk:
        CF = suite.sensors[n].C @ Fp
        G += CF.T @ CF
        Fp = system.F @ Fp
    return G


def _gramian_ok(G):
    s = np.linalg.svd(G, compute_uv=False)
    return s[-1] > TOL_RANK * max(1.0, s[0]), float(s[-1])


def _neighbours(adjacency):
    A = np.asarray(adjacency)
    return [[int(m) for m in np.flatnonzero(A[n] > 0)] for n in range(A.shape[0])]


def _covering_walk(nbrs, start=0):
    """Depth-first traversal written out as a walk (backtracking steps included)."""
    N = len(nbrs)
    walk, seen, stack = [start], {start}, [start]
    while len(seen) < N and stack:
        here = stack[-1]
        nxt = next((m for m in nbrs[here] if m not in seen), None)
        if nxt is None:
            stack.pop()
            if stack:
                walk.append(stack[-1])
            continue
        seen.add(nxt)
        stack.append(nxt)
        walk.append(nxt)
    return walk if len(seen) == N else None


def check_weak_detectability(system, suite, adjacency, max_walk_len=None, trials=1000, rng=None,
                             enum_cap=20000):
    """Search for a walk witnessing weak detectability.

    ``adjacency`` is the graph the walk must follow (the positive entries
    of the mean adjacency). The search tries repeated covering walks,
    then a capped depth-first enumeration, then ``trials`` random walks.
    Failing to find a witness is reported as inconclusive, never as a
    disproof.
    """
    N, M = suite.N, system.M
    if max_walk_len is None:
        max_walk_len = 2 * N * M
    nbrs = _neighbours(adjacency)
    blocks = [s.C.T @ s.C for s in suite.sensors]

    def scan(walk):
        # Gramian along the walk; returns the shortest covering prefix that works
        G = np.zeros((M, M))
        Fp = np.eye(M)
        seen = set()
        for i, n in enumerate(walk[:max_walk_len]):
            G += Fp.T @ blocks[n] @ Fp
            Fp = system.F @ Fp
            seen.add(n)
            if len(seen) == N:
                ok, smin = _gramian_ok(G)
                if ok:
                    return tuple(walk[: i + 1]), smin
        return None

    for start in range(N):
        base = _covering_walk(nbrs, start)
        if base is None:
            continue
        # ping-pong along the covering walk; stays on graph edges
        if len(base) == 1:
            reps = base * max_walk_len
        else:
            reps, fwd = base[:], False
            while len(reps) < max_walk_len:
                reps.extend(base[1:] if fwd else base[::-1][1:])
                fwd = not fwd
        hit = scan(reps)
        if hit:
            return DetectabilityResult(True, hit[0], hit[1], "repeated covering walk")

    budget = [enum_cap]

    def dfs(walk, G, Fp, seen):
        if budget[0] <= 0 or len(walk) >= max_walk_len:
            return None
        for m in nbrs[walk[-1]]:
            budget[0] -= 1
            G2 = G + Fp.T @ blocks[m] @ Fp
            seen2 = seen | {m}
            w2 = walk + [m]
            if len(seen2) == N:
                ok, smin = _gramian_ok(G2)
                if ok:
                    return tuple(w2), smin
            found = dfs(w2, G2, system.F @ Fp, seen2)
            if found or budget[0] <= 0:
                return found
        return None

    for start in range(N):
        found = dfs([start], blocks[start].copy(), system.F.copy(), {start})
        if found is None and N == 1:
            ok, smin = _gramian_ok(blocks[0])
            if ok:
                found = ((0,), smin)
        if found:
            return DetectabilityResult(True, found[0], found[1], "depth-first enumeration")

    rng = np.random.default_rng(0) if rng is None else rng
    for _ in range(int(trials)):
        walk = [int(rng.integers(N))]
        while len(walk) < max_walk_len:
            walk.append(int(rng.choice(nbrs[walk[-1]])))
        hit = scan(walk)
        if hit:
            return DetectabilityResult(True, hit[0], hit[1], "random walk")
    return DetectabilityResult(False, None, 0.0, f"no witness up to length {max_walk_len}")


def simulate_trajectory(system, horizon, rng, x0=None):
    """States x_0..x_K of the signal process, shape (K+1, M)."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    M = system.M
    Lq = psd_sqrt(system.Q)
    if x0 is None:
        x0 = psd_sqrt(system.P0) @ rng.standard_normal(M)
    xs = np.empty((horizon + 1, M))
    xs[0] = x0
    noise = rng.standard_normal((horizon, M)) @ Lq.T
    for k in range(horizon):
        xs[k + 1] = system.F @ xs[k] + noise[k]
    return xs


def step_state(system, x, rng, sqrt_Q=None):
    G = psd_sqrt(system.Q) if sqrt_Q is None else sqrt_Q
    return system.F @ x + G @ rng.standard_normal(system.M)


def observe(sensor, x, rng):
    L = np.linalg.cholesky(sensor.R)
    return sensor.C @ x + L @ rng.standard_normal(sensor.obs_dim)


# Named generators. None of these matrices come from a published experiment.

def rotation_chain(M, N, growth=1.02, angle=0.35, q=1.0, r=1.0):
    """Block-rotation dynamics, marginally unstable, one coordinate per sensor.

    Sensor n observes coordinate ``(2 n) mod M`` so that each 2x2 rotation
    block is seen by at least one sensor when ``N >= M/2``.
    """
    F = np.zeros((M, M))
    c, s = np.cos(angle), np.sin(angle)
    for b in range(0, M - 1, 2):
        theta = angle * (1 + 0.37 * b)
        c, s = np.cos(theta), np.sin(theta)
        F[b:b + 2, b:b + 2] = growth * np.array([[c, -s], [s, c]])
    if M % 2:
        F[M - 1, M - 1] = growth
    sensors = []
    for n in range(N):
        C = np.zeros((1, M))
        C[0, (2 * n) % M] = 1.0
        sensors.append(Sensor(C, r * np.eye(1)))
    return LinearSystem(F, q * np.eye(M)), SensorSuite(sensors)


def planar_triplet(growth=1.25, angle=0.6, r=0.5):
    """Three sensors on a growing planar rotation; any two of them observe the full state.

    Sensors see ``x1``, ``x2`` and ``x1 + x2``. A single sensor alone
    leaves one direction unobserved for a step, which is what pushes the
    covariance away from the centralized value.
    """
    c, s = np.cos(angle), np.sin(angle)
    F = growth * np.array([[c, -s], [s, c]])
    sensors = [Sensor([[1.0, 0.0]], [[r]]), Sensor([[0.0, 1.0]], [[r]]), Sensor([[1.0, 1.0]], [[r]])]
    return LinearSystem(F, np.eye(2)), SensorSuite(sensors)
