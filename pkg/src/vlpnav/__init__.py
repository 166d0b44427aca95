"""Tightly-coupled VLP/INS navigation engine.

Fuses Lambertian RSS measurements from ceiling LEDs with IMU
pre-integration in a sliding-window nonlinear least-squares graph,
detects light blockages on the raw RSS stream, and ships a deterministic
simulator plus reference baselines for comparison runs.
"""

from .channel import LedBeacon, ReceiverConfig, RssSample, SampleFlag
from .estimator import (
    ConstraintConfig,
    EstimatorConfig,
    SlidingWindow,
    TightlyCoupledEstimator,
)
from .preint import ImuNoise, ImuStream, PreintegratedImu
from .simulator import Scenario, reference_scenarios
from .state import NavState

__all__ = [
    "ConstraintConfig",
    "EstimatorConfig",
    "ImuNoise",
    "ImuStream",
    "LedBeacon",
    "NavState",
    "PreintegratedImu",
    "ReceiverConfig",
    "RssSample",
    "SampleFlag",
    "Scenario",
    "SlidingWindow",
    "TightlyCoupledEstimator",
    "reference_scenarios",
]
