"""Scenario constants, the decision vector and structural validation."""
from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

SPEED_OF_LIGHT = 3.0e8


class ConfigError(ValueError):
    """Raised for malformed or inconsistent scenario settings."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


def watts_to_normalized(watts: float, noise_dbm: float) -> float:
    """Transmit power divided by the noise power."""
    return watts / dbm_to_watts(noise_dbm)


def dbm_to_normalized(dbm: float, noise_dbm: float) -> float:
    return 10.0 ** ((dbm - noise_dbm) / 10.0)


_DEFAULT_NOISE_DBM = -113.0


@dataclass(frozen=True)
class SystemConfig:
    bandwidth_hz: float = 1e6
    carrier_hz: float = 2e9
    wavelength_m: float = 0.15          # c / f_c
    noise_dbm: float = _DEFAULT_NOISE_DBM
    latency_bound_s: float = 1e-3
    dep_bound: float = 1e-5
    ring_inner_m: float = 35.0
    ring_outer_m: float = 95.0
    bs_height_m: float = 0.0
    # powers are noise-normalized: 5 W at -113 dBm noise
    total_power: float = watts_to_normalized(5.0, _DEFAULT_NOISE_DBM)
    pilot_power: float = 0.1
    num_users: int = 5
    rx_antennas: int = 3
    total_cus: int = 1000
    min_rate: float = 2.0
    sca_tol: float = 1e-6
    jprt_tol: float = 1e-3
    max_iters: int = 50
    seed: int = 0

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems))
        if self.bs_height_m > self.ring_inner_m / 10.0:
            warnings.warn(
                f"bs_height_m={self.bs_height_m} is not small against ring_inner_m="
                f"{self.ring_inner_m}; the closed-form expectations drop the height",
                stacklevel=3,
            )

    def problems(self) -> List[str]:
        out = []
        if not 0 < self.ring_inner_m <= self.ring_outer_m:
            out.append("need 0 < ring_inner_m <= ring_outer_m")
        if not 0 < self.dep_bound < 0.5:
            out.append("dep_bound must lie in (0, 0.5)")
        if not self.latency_bound_s > 0:
            out.append("latency_bound_s must be positive")
        if not self.bandwidth_hz > 0:
            out.append("bandwidth_hz must be positive")
        if self.total_cus != round(self.latency_bound_s * self.bandwidth_hz):
            out.append(
                f"total_cus={self.total_cus} differs from round(latency_bound_s*bandwidth_hz)="
                f"{round(self.latency_bound_s * self.bandwidth_hz)}"
            )
        if self.num_users < 1:
            out.append("num_users must be >= 1")
        if self.rx_antennas < 1:
            out.append("rx_antennas must be >= 1")
        if not self.total_power > 0:
            out.append("total_power must be positive")
        if not self.pilot_power > 0:
            out.append("pilot_power must be positive")
        if self.min_rate < 0:
            out.append("min_rate must be >= 0")
        if self.bs_height_m < 0:
            out.append("bs_height_m must be >= 0")
        if self.max_iters < 1:
            out.append("max_iters must be >= 1")
        return out

    @property
    def min_tx(self) -> int:
        """Smallest antenna count for which the ZF inverse is well posed."""
        return self.num_users * self.rx_antennas + 1

    def replace(self, **changes) -> "SystemConfig":
        """Copy with changes; keeps total_cus consistent with latency and bandwidth.

        Changing ``total_cus`` alone rescales the bandwidth at fixed latency.
        """
        changes = dict(changes)
        if "carrier_hz" in changes and "wavelength_m" not in changes:
            changes["wavelength_m"] = SPEED_OF_LIGHT / changes["carrier_hz"]
        lat = changes.get("latency_bound_s", self.latency_bound_s)
        if "total_cus" in changes and "bandwidth_hz" not in changes:
            changes["bandwidth_hz"] = changes["total_cus"] / lat
        elif "total_cus" not in changes and (
            "latency_bound_s" in changes or "bandwidth_hz" in changes
        ):
            bw = changes.get("bandwidth_hz", self.bandwidth_hz)
            changes["total_cus"] = int(round(lat * bw))
        return dataclasses.replace(self, **changes)


_INT_FIELDS = {"num_users", "rx_antennas", "total_cus", "max_iters", "seed"}
# convenience keys accepted by the config file, converted once at ingestion
_POWER_ALIASES = {
    "total_power_w": ("total_power", "w"),
    "total_power_dbm": ("total_power", "dbm"),
    "pilot_power_w": ("pilot_power", "w"),
    "pilot_power_dbm": ("pilot_power", "dbm"),
}


def parse_config_text(text: str) -> SystemConfig:
    """Parse ``key = value`` lines (``#`` comments allowed) into a config.

    Keys are the SystemConfig field names. ``total_power_w`` / ``_dbm`` and
    ``pilot_power_w`` / ``_dbm`` are converted to noise-normalized values.
    """
    names = {f.name for f in dataclasses.fields(SystemConfig)}
    raw: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, val = line.split("=", 1)
        elif ":" in line:
            key, val = line.split(":", 1)
        else:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = key.strip(), val.strip()
        if key not in names and key not in _POWER_ALIASES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        raw[key] = val

    values: Dict[str, Union[int, float]] = {}
    try:
        for key, val in raw.items():
            if key in _POWER_ALIASES:
                continue
            values[key] = int(float(val)) if key in _INT_FIELDS else float(val)
        noise = float(values.get("noise_dbm", _DEFAULT_NOISE_DBM))
        for key, (target, unit) in _POWER_ALIASES.items():
            if key in raw:
                if target in values:
                    raise ConfigError(f"both {key} and {target} given")
                v = float(raw[key])
                values[target] = (
                    watts_to_normalized(v, noise) if unit == "w" else dbm_to_normalized(v, noise)
                )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value: {exc}") from exc

    if "carrier_hz" in values and "wavelength_m" not in values:
        values["wavelength_m"] = SPEED_OF_LIGHT / values["carrier_hz"]
    if "total_cus" not in values:
        lat = values.get("latency_bound_s", SystemConfig.latency_bound_s)
        bw = values.get("bandwidth_hz", SystemConfig.bandwidth_hz)
        values["total_cus"] = int(round(lat * bw))
    if "total_power" not in values and "noise_dbm" in values:
        values["total_power"] = watts_to_normalized(5.0, noise)
    return SystemConfig(**values)


def load_config(path: Union[str, Path, None]) -> SystemConfig:
    if path is None:
        return SystemConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def dump_config(config: SystemConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        lines.append(f"{f.name} = {getattr(config, f.name)!r}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ResourceAllocation:
    n_tx: int
    n_pilot: int
    n_data: int
    power_common: float
    power_private: np.ndarray
    rate_common_total: float
    rate_common_user: np.ndarray
    rate_private: np.ndarray

    def __post_init__(self):
        for name in ("power_private", "rate_common_user", "rate_private"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def total_power(self) -> float:
        return float(self.power_common + self.power_private.sum())


@dataclass(frozen=True)
class EtrReport:
    dep_common: np.ndarray
    dep_private: np.ndarray
    etr_common: np.ndarray
    etr_private: np.ndarray
    total_etr: float
    slack_dep_common: np.ndarray
    slack_dep_private: np.ndarray
    slack_rate_floor: np.ndarray


@dataclass(frozen=True)
class Violation:
    constraint: str
    residual: float

    def __str__(self):
        return f"{self.constraint}: residual {self.residual:.3e}"


def validate(config: SystemConfig, alloc: ResourceAllocation, tol: float = 1e-9) -> List[Violation]:
    """Check the structural constraints of the allocation problem.

    Returns an empty list when every constraint holds. Violations carry the
    constraint name and a positive residual (amount by which it is broken).
    """
    out: List[Violation] = []
    U = config.num_users

    def check(name, residual):
        if residual > tol:
            out.append(Violation(name, float(residual)))

    for name in ("power_private", "rate_common_user", "rate_private"):
        if getattr(alloc, name).shape != (U,):
            out.append(Violation(f"{name} length", float(abs(getattr(alloc, name).size - U))))
    if out:
        return out

    check("antenna count positive", 1 - alloc.n_tx)
    check("pilot floor", alloc.n_tx - alloc.n_pilot)
    check("blocklength lower bound", alloc.n_tx - (alloc.n_pilot + alloc.n_data))
    check("blocklength budget", alloc.n_pilot + alloc.n_data - config.total_cus)
    scale = max(config.total_power, 1.0)
    check("power budget", (alloc.total_power - config.total_power) / scale)
    check("nonnegative power", -min(alloc.power_common, alloc.power_private.min()) / scale)
    check(
        "common-rate sum",
        abs(alloc.rate_common_user.sum() - alloc.rate_common_total) - 1e-9 * max(1.0, alloc.rate_common_total),
    )
    rates = np.concatenate(([alloc.rate_common_total], alloc.rate_common_user, alloc.rate_private))
    check("nonnegative rate", -rates.min())
    check(
        "rate floor",
        float(np.max(config.min_rate - (alloc.rate_common_user + alloc.rate_private))) - 1e-9,
    )
    return out
