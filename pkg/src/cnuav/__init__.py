"""Uplink UAV-assisted cognitive NOMA simulator with an active-inference allocator.

The package is organised as a plain numpy library:

- ``radio_env``  -- geometry, path loss, Rician fading, primary-user activity
- ``noma``       -- constellations, superposition, SIC decoding, rates, power shaping
- ``gng``        -- growing neural gas clustering
- ``gdbn``       -- offline perception: generalized states, vocabularies, transitions
- ``mjpf``       -- online inference: Markov jump particle filter and abnormality
- ``agent``      -- active-inference decision layer and episode loop
- ``baselines``  -- Q-learning, OMA, random and exhaustive-oracle allocators
- ``harness``    -- experiment configuration, presets, persistence, reports
- ``cli``        -- command line entry point (``cnuav``)
"""

from cnuav.radio_env import (
    Scenario,
    PathLossConfig,
    FadingConfig,
    PuActivityModel,
    Subchannel,
)
from cnuav.noma import Allocation, ConstellationConfig, RateReport
from cnuav.harness import ExperimentConfig, load_config

__all__ = [
    "Scenario",
    "PathLossConfig",
    "FadingConfig",
    "PuActivityModel",
    "Subchannel",
    "Allocation",
    "ConstellationConfig",
    "RateReport",
    "ExperimentConfig",
    "load_config",
]

__version__ = "0.1.0"
