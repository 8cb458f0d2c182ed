"""Locations of the data files shipped with the package."""
from __future__ import annotations

from importlib import resources
from pathlib import Path


def _data_path(*parts: str) -> Path:
    root = resources.files("plantune") / "data"
    return Path(str(root.joinpath(*parts)))


def bundled_arm_model() -> Path:
    return _data_path("iiwa7.yaml")


def bundled_scene(name: str) -> Path:
    """Path of a bundled scene config, e.g. "table_clearing" or "two_objects"."""
    return _data_path(f"{name}.yaml")


def bundled_script(name: str) -> Path:
    """Directory of a bundled scripted-backend corpus."""
    return _data_path("scripted", name)
