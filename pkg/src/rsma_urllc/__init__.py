"""Rate-splitting downlink for short-packet URLLC with imperfect CSI.

Joint power, rate and transmit-antenna optimization under finite-blocklength
error probabilities, with SDMA and NOMA baselines and an experiment CLI.
"""
from .config import (
    ConfigError, EtrReport, ResourceAllocation, SystemConfig, Violation, load_config, validate,
)
from .optimizer import InfeasibleError, OptTrace, ScaState, jprt, select_antennas
from .schemes import SchemeKind, solve_noma, solve_scheme, solve_sdma
from .sinr import SinrProfile

__all__ = [
    "ConfigError", "EtrReport", "InfeasibleError", "OptTrace", "ResourceAllocation",
    "ScaState", "SchemeKind", "SinrProfile", "SystemConfig", "Violation", "jprt",
    "load_config", "select_antennas", "solve_noma", "solve_scheme", "solve_sdma", "validate",
]
