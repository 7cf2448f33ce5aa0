"""Gossip-based distributed Kalman filtering with observation dissemination.

Subset Riccati operators, the switched random Riccati recursion, empirical
invariant measures and large-deviation bounds for rare covariance events.
"""

from .analysis import (RareEvent, Scenario, dirac_convergence_report, empirical_cdf, ld_bounds,
                       ld_exponent_estimate, rare_event_probability, sample_invariant_measure)
from .errors import ConfigurationError, DivergenceError, InvariantViolation
from .model import LinearSystem, Sensor, SensorSuite, planar_triplet, rotation_chain
from .network import GossipTopology, MatchingDistribution, default_matching_distribution
from .riccati import RiccatiString, centralized_fixed_point, riccati_op

__version__ = "0.1.0"
