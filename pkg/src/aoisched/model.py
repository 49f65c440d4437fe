"""Physical parameters, fading quantization and energy arithmetic.

All energies are handled in integer *quanta*: one quantum is the battery
capacity of a device divided by ``battery_levels - 1``, so a battery holds
between 0 and ``battery_levels - 1`` quanta.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidConfigError

RECIPROCAL = "reciprocal"
INDEPENDENT = "independent"


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


@dataclass(frozen=True)
class ChannelQuantizer:
    """Equal-probability discretization of the unit-mean exponential fading power."""

    level_count: int
    boundaries: np.ndarray
    representatives: np.ndarray
    probabilities: np.ndarray


def quantize_fading(levels: int) -> ChannelQuantizer:
    """Split Exp(1) into ``levels`` equiprobable bins.

    Bin k (1-based) spans [-ln(1-(k-1)/L), -ln(1-k/L)). Bounded bins are
    represented by their midpoint, the unbounded last bin by its conditional
    mean, which for an exponential is the lower edge plus one.
    """
    if not isinstance(levels, (int, np.integer)) or levels < 2:
        raise InvalidConfigError(f"channel level count must be an integer >= 2, got {levels!r}")
    k = np.arange(1, levels)
    boundaries = -np.log1p(-k / levels)
    edges = np.concatenate(([0.0], boundaries))
    reps = np.empty(levels)
    reps[:-1] = 0.5 * (edges[:-1] + edges[1:])
    reps[-1] = boundaries[-1] + 1.0
    probs = np.full(levels, 1.0 / levels)
    for arr in (boundaries, reps, probs):
        arr.setflags(write=False)
    return ChannelQuantizer(int(levels), boundaries, reps, probs)


@dataclass(frozen=True)
class DeviceConfig:
    distance: float
    battery_capacity: float
    packet_size: float
    aoi_cap: int
    weight: float = 1.0


@dataclass(frozen=True)
class SystemConfig:
    """Network, radio and discretization parameters (SI units, linear scale)."""

    devices: tuple[DeviceConfig, ...]
    slot_duration: float = 1.0
    bandwidth: float = 1e6
    dest_tx_power: float = dbm_to_watts(37.0)
    noise_power: float = dbm_to_watts(-95.0)
    path_loss_exponent: float = 2.0
    intercept: float = 2e-2
    antenna_gain: float = db_to_linear(7.0)
    harvest_efficiency: float = 0.5
    channel_levels: int = 10
    battery_levels: int = 10
    channel_mode: str = RECIPROCAL
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        self.validate()

    @property
    def K(self) -> int:
        return len(self.devices)

    @property
    def weights(self) -> np.ndarray:
        return np.array([d.weight for d in self.devices], dtype=float)

    @property
    def aoi_caps(self) -> np.ndarray:
        return np.array([d.aoi_cap for d in self.devices], dtype=int)

    def validate(self) -> None:
        if not self.devices:
            raise InvalidConfigError("at least one device is required")
        positive = {
            "slot_duration": self.slot_duration,
            "bandwidth": self.bandwidth,
            "dest_tx_power": self.dest_tx_power,
            "noise_power": self.noise_power,
            "path_loss_exponent": self.path_loss_exponent,
            "intercept": self.intercept,
            "antenna_gain": self.antenna_gain,
        }
        for name, value in positive.items():
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise InvalidConfigError(f"{name} must be a finite positive number, got {value!r}")
        if not 0.0 <= self.harvest_efficiency <= 1.0:
            raise InvalidConfigError(f"harvest_efficiency must lie in [0, 1], got {self.harvest_efficiency}")
        if int(self.channel_levels) != self.channel_levels or self.channel_levels < 2:
            raise InvalidConfigError(f"channel_levels must be an integer >= 2, got {self.channel_levels}")
        if int(self.battery_levels) != self.battery_levels or self.battery_levels < 1:
            raise InvalidConfigError(f"battery_levels must be an integer >= 1, got {self.battery_levels}")
        if self.channel_mode not in (RECIPROCAL, INDEPENDENT):
            raise InvalidConfigError(f"channel_mode must be '{RECIPROCAL}' or '{INDEPENDENT}'")
        for i, dev in enumerate(self.devices, start=1):
            for name in ("distance", "battery_capacity"):
                value = getattr(dev, name)
                if not (math.isfinite(value) and value > 0):
                    raise InvalidConfigError(f"device {i}: {name} must be positive, got {value!r}")
            if not (math.isfinite(dev.packet_size) and dev.packet_size >= 0):
                raise InvalidConfigError(f"device {i}: packet_size must be >= 0, got {dev.packet_size!r}")
            if int(dev.aoi_cap) != dev.aoi_cap or dev.aoi_cap < 1:
                raise InvalidConfigError(f"device {i}: aoi_cap must be an integer >= 1, got {dev.aoi_cap!r}")
            if not (math.isfinite(dev.weight) and dev.weight >= 0):
                raise InvalidConfigError(f"device {i}: weight must be >= 0, got {dev.weight!r}")
        if self.weights.sum() <= 0:
            raise InvalidConfigError("device weights must not all be zero")

    @cached_property
    def quantizer(self) -> ChannelQuantizer:
        return quantize_fading(int(self.channel_levels))

    def energy_unit(self, i: int) -> float:
        """Joules per battery quantum for device ``i`` (0-based)."""
        dev = self._device(i)
        # a single-level battery stores nothing; keep the unit finite
        return dev.battery_capacity / max(self.battery_levels - 1, 1)

    def path_gain(self, i: int) -> float:
        """Large-scale power gain including the antenna gain."""
        dev = self._device(i)
        return self.antenna_gain * self.intercept * dev.distance ** (-self.path_loss_exponent)

    def _device(self, i: int) -> DeviceConfig:
        if not 0 <= i < self.K:
            raise IndexError(f"device index {i} out of range for K={self.K}")
        return self.devices[i]

    def with_devices(self, **changes) -> "SystemConfig":
        """Copy with the given DeviceConfig fields replaced on every device."""
        devices = tuple(DeviceConfig(**{**asdict(d), **changes}) for d in self.devices)
        return self.replace(devices=devices)

    def replace(self, **changes) -> "SystemConfig":
        data = {f: getattr(self, f) for f in self.__dataclass_fields__}
        data.update(changes)
        return SystemConfig(**data)

    def to_dict(self) -> dict:
        data = {f: getattr(self, f) for f in self.__dataclass_fields__ if f not in ("devices", "name")}
        data["K"] = self.K
        data["devices"] = [asdict(d) for d in self.devices]
        if self.name:
            data["name"] = self.name
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        data = dict(data)
        try:
            raw_devices = data.pop("devices")
        except KeyError:
            raise InvalidConfigError("config has no 'devices' list") from None
        k = data.pop("K", None)
        data.pop("comment", None)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            devices = tuple(DeviceConfig(**d) for d in raw_devices)
        except TypeError as exc:
            raise InvalidConfigError(f"bad device entry: {exc}") from None
        if k is not None and k != len(devices):
            raise InvalidConfigError(f"K={k} but {len(devices)} devices listed")
        return cls(devices=devices, **data)


def load_config(path: str | Path) -> SystemConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise InvalidConfigError("config must be a JSON object")
    return SystemConfig.from_dict(data)


def tx_energy_quanta(config: SystemConfig, i: int, level: int) -> int:
    """Quanta needed for device ``i`` (0-based) to deliver its packet at uplink level ``level`` (1-based).

    Transmit power is chosen so the Shannon rate over one slot just carries
    the packet. The count may exceed ``battery_levels - 1``; such a level
    can never be used.
    """
    q = config.quantizer
    if not 1 <= level <= q.level_count:
        raise IndexError(f"channel level {level} outside 1..{q.level_count}")
    dev = config._device(i)
    T, W = config.slot_duration, config.bandwidth
    snr_needed = 2.0 ** (dev.packet_size / (T * W)) - 1.0
    gain = config.path_gain(i) * q.representatives[level - 1]
    e_req = snr_needed * config.noise_power * T / gain
    quanta = math.ceil(e_req / config.energy_unit(i) - 1e-12)
    return max(quanta, 1)


def harvest_quanta(config: SystemConfig, i: int, level: int) -> int:
    """Whole quanta harvested by device ``i`` in one energy-transfer slot at downlink ``level``."""
    q = config.quantizer
    if not 1 <= level <= q.level_count:
        raise IndexError(f"channel level {level} outside 1..{q.level_count}")
    gain = config.path_gain(i) * q.representatives[level - 1]
    e_h = config.harvest_efficiency * config.dest_tx_power * gain * config.slot_duration
    return int(math.floor(e_h / config.energy_unit(i) + 1e-12))


def tx_quanta_table(config: SystemConfig) -> np.ndarray:
    """(K, L_h) array of transmit costs."""
    L = config.channel_levels
    return np.array([[tx_energy_quanta(config, i, k) for k in range(1, L + 1)] for i in range(config.K)], dtype=np.int64)


def harvest_quanta_table(config: SystemConfig) -> np.ndarray:
    L = config.channel_levels
    return np.array([[harvest_quanta(config, i, k) for k in range(1, L + 1)] for i in range(config.K)], dtype=np.int64)


def never_transmits(config: SystemConfig) -> list[int]:
    """0-based devices whose cheapest transmission exceeds battery capacity."""
    table = tx_quanta_table(config)
    return [i for i in range(config.K) if table[i].min() > config.battery_levels - 1]


def state_count(config: SystemConfig) -> int:
    per_device_channel = config.channel_levels ** (2 if config.channel_mode == INDEPENDENT else 1)
    n = 1
    for dev in config.devices:
        n *= config.battery_levels * per_device_channel * int(dev.aoi_cap)
    return n


def make_config(devices: Sequence[dict], **kwargs) -> SystemConfig:
    """Convenience constructor from plain dicts."""
    return SystemConfig(devices=tuple(DeviceConfig(**d) for d in devices), **kwargs)
