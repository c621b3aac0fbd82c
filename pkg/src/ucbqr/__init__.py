"""Episodic UCB routing for skill-based queueing networks."""

from .model import (CompatibilityNetwork, ModelError, ParameterChange, ParameterSchedule,
                    PayoffModel, check_stability, kl_bernoulli, sample_payoff)

__version__ = "0.1.0"

__all__ = [
    "CompatibilityNetwork", "ModelError", "ParameterChange", "ParameterSchedule",
    "PayoffModel", "check_stability", "kl_bernoulli", "sample_payoff",
]
