"""Bundled configurations for the single-device and two-device setups."""

from importlib import resources
from pathlib import Path

from ..model import SystemConfig, load_config

NAMES = ("single", "pair", "pair_s15", "pair_e02")


def path(name: str) -> Path:
    return Path(str(resources.files(__name__).joinpath(f"{name}.json")))


def load(name: str) -> SystemConfig:
    return load_config(path(name))
