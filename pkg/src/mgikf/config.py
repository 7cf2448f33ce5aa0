"""Experiment configuration: a TOML document mapped onto a scenario and run settings.

Schema (all sections optional except where noted)::

    seed = 12345                    # 64-bit master seed
    out = "results"                 # output directory

    [system]                        # required
    generator = "rotation_chain"    # rotation_chain | planar_triplet | explicit
    M = 10                          # rotation_chain only
    growth = 1.02
    angle = 0.35
    q = 1.0
    r = 1.0
    # explicit: F = [[...]], Q = [[...]], optional P0 = [[...]]
    # and one [[sensor]] table per sensor with C = [[...]], R = [[...]]

    [topology]
    kind = "ring"                   # complete | path | ring | custom
    N = 5
    file = "graph.txt"              # custom only; relative to the config file

    [matching]
    kind = "default"                # default | explicit
    laziness = 0.0
    # explicit: support = [[2, 1, 3], ...] (1-based partner arrays), probs = [...]

    [experiment]
    gamma = [30, 40, 50, 60]
    burn_in = 10000
    n_samples = 5000

    [rare_event]
    statistics = ["trace", "lambda_max"]
    epsilon_fraction = 0.5          # or epsilon = <absolute radius>

    [ld]
    max_len = 4
    max_expansions = 200000
    L = 0                           # 0 = smallest L with alpha < 1
    path_graph = "maximal"          # maximal | mean
"""

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .analysis import STATISTICS, Scenario
from .errors import ConfigurationError
from .model import LinearSystem, Sensor, SensorSuite, planar_triplet, rotation_chain
from .network import GossipTopology, MatchingDistribution, default_matching_distribution

SEED_ENV = "RRE_GOSSIP_SEED"


@dataclass
class ExperimentConfig:
    scenario: Scenario
    seed: int
    out: Path
    gamma: list
    burn_in: int = 10_000
    n_samples: int = 5000
    statistics: tuple = STATISTICS
    epsilon_fraction: float = 0.5
    epsilon: float = None
    ld: dict = field(default_factory=dict)
    digest: str = ""


def _get(table, key, kind, where, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigurationError(f"{where}: missing required field '{key}'")
        return default
    value = table[key]
    try:
        if kind is int and isinstance(value, bool):
            raise TypeError
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{where}.{key}: expected {kind.__name__}, got {value!r}") from None


def _matrix(table, key, where):
    if key not in table:
        raise ConfigurationError(f"{where}: missing required field '{key}'")
    try:
        return np.array(table[key], dtype=float)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{where}.{key}: not a numeric matrix") from None


def _topology(doc, base):
    t = doc.get("topology", {})
    kind = _get(t, "kind", str, "topology", "complete")
    if kind == "custom":
        path = _get(t, "file", str, "topology", required=True)
        p = (base / path) if not os.path.isabs(path) else Path(path)
        if not p.exists():
            raise ConfigurationError(f"topology.file: {p} does not exist")
        return GossipTopology.parse(p.read_text())
    N = _get(t, "N", int, "topology", 3)
    makers = {"complete": GossipTopology.complete, "path": GossipTopology.path, "ring": GossipTopology.ring}
    if kind not in makers:
        raise ConfigurationError(f"topology.kind: unknown kind {kind!r}")
    return makers[kind](N)


def _system(doc, N):
    if "system" not in doc:
        raise ConfigurationError("missing required section [system]")
    s = doc["system"]
    gen = _get(s, "generator", str, "system", "explicit")
    if gen == "rotation_chain":
        M = _get(s, "M", int, "system", required=True)
        return rotation_chain(M, N, growth=_get(s, "growth", float, "system", 1.02),
                              angle=_get(s, "angle", float, "system", 0.35),
                              q=_get(s, "q", float, "system", 1.0), r=_get(s, "r", float, "system", 1.0))
    if gen == "planar_triplet":
        if N != 3:
            raise ConfigurationError(f"system.generator planar_triplet needs 3 sensors, topology has {N}")
        return planar_triplet(growth=_get(s, "growth", float, "system", 1.25),
                              angle=_get(s, "angle", float, "system", 0.6), r=_get(s, "r", float, "system", 0.5))
    if gen != "explicit":
        raise ConfigurationError(f"system.generator: unknown generator {gen!r}")
    P0 = _matrix(s, "P0", "system") if "P0" in s else None
    system = LinearSystem(_matrix(s, "F", "system"), _matrix(s, "Q", "system"), P0=P0)
    sensors = doc.get("sensor", [])
    if len(sensors) != N:
        raise ConfigurationError(f"[[sensor]]: {len(sensors)} sensors given, topology has {N} nodes")
    suite = SensorSuite([Sensor(_matrix(t, "C", f"sensor[{i}]"), _matrix(t, "R", f"sensor[{i}]"))
                         for i, t in enumerate(sensors)])
    suite.check_against(system)
    return system, suite


def _matching(doc, topology):
    m = doc.get("matching", {})
    kind = _get(m, "kind", str, "matching", "default")
    if kind == "default":
        return default_matching_distribution(topology, laziness=_get(m, "laziness", float, "matching", 0.0))
    if kind != "explicit":
        raise ConfigurationError(f"matching.kind: unknown kind {kind!r}")
    support = [np.asarray(p, dtype=int) - 1 for p in m.get("support", [])]
    probs = m.get("probs", [])
    return MatchingDistribution(topology, tuple(support), np.asarray(probs, dtype=float))


def resolve_seed(doc_seed, cli_seed=None):
    if cli_seed is not None:
        seed = cli_seed
    elif os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV], 0)
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV}: not an integer") from None
    else:
        seed = doc_seed
    if not 0 <= int(seed) < 2 ** 64:
        raise ConfigurationError(f"seed {seed} is not an unsigned 64-bit value")
    return int(seed)


def parse_config(text, base=Path("."), cli_seed=None):
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        where = f" (line {exc.lineno}, column {exc.colno})" if getattr(exc, "lineno", None) else ""
        raise ConfigurationError(f"config is not valid TOML{where}: {exc}") from None
    topology = _topology(doc, Path(base))
    system, suite = _system(doc, topology.N)
    dist = _matching(doc, topology)
    exp = doc.get("experiment", {})
    gamma = exp.get("gamma", [30, 40, 50, 60])
    if not isinstance(gamma, list) or not gamma:
        raise ConfigurationError("experiment.gamma: expected a non-empty list")
    try:
        gamma = [float(g) for g in gamma]
    except (TypeError, ValueError):
        raise ConfigurationError("experiment.gamma: entries must be numbers") from None
    if any(g < 0 for g in gamma):
        raise ConfigurationError("experiment.gamma: entries must be >= 0")
    ev = doc.get("rare_event", {})
    stats = tuple(ev.get("statistics", list(STATISTICS)))
    for s in stats:
        if s not in STATISTICS:
            raise ConfigurationError(f"rare_event.statistics: unknown statistic {s!r}")
    ld = doc.get("ld", {})
    return ExperimentConfig(
        scenario=Scenario(system, suite, topology, dist),
        seed=resolve_seed(_get(doc, "seed", int, "config", 0), cli_seed),
        out=Path(base) / _get(doc, "out", str, "config", "results"),
        gamma=gamma,
        burn_in=_get(exp, "burn_in", int, "experiment", 10_000),
        n_samples=_get(exp, "n_samples", int, "experiment", 5000),
        statistics=stats,
        epsilon_fraction=_get(ev, "epsilon_fraction", float, "rare_event", 0.5),
        epsilon=_get(ev, "epsilon", float, "rare_event", None),
        ld={
            "max_len": _get(ld, "max_len", int, "ld", 4),
            "max_expansions": _get(ld, "max_expansions", int, "ld", 200_000),
            "L": _get(ld, "L", int, "ld", 0) or None,
            "path_graph": _get(ld, "path_graph", str, "ld", "maximal"),
        },
        digest=hashlib.sha256(text.encode()).hexdigest(),
    )


def load_config(path, cli_seed=None):
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"config file {p} does not exist")
    return parse_config(p.read_text(), base=p.parent, cli_seed=cli_seed)
