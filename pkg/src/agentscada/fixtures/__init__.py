"""Bundled device configurations for the three mill stations."""

from importlib import resources

STATIONS = ("winder", "wrapping", "salvage")


def read_fixture(name: str) -> str:
    """Return the TOML text of a bundled station config ("winder", ...)."""
    return resources.files(__package__).joinpath(f"{name}.toml").read_text(encoding="utf-8")
