"""Bundled synthetic fixtures: a 12-bus feeder and its companion files.

The feeder stands in for the utility data named by the project brief;
no real grid data ships with the package.
"""

from importlib import resources
from pathlib import Path


def fixture_path(name: str) -> Path:
    return Path(resources.files(__package__) / name)


def network12_path() -> Path:
    return fixture_path("network12.json")


def scenarios_path() -> Path:
    return fixture_path("scenarios.csv")


def events_path() -> Path:
    return fixture_path("events.json")


def traffic_path() -> Path:
    return fixture_path("traffic.json")


def demo_config_path() -> Path:
    return fixture_path("demo.toml")
