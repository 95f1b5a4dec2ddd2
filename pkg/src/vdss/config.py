"""Configuration loading.

Defaults ship as package data under ``vdss/config/``. A deployment can
override any file by placing a copy in a directory passed explicitly or
named by the ``VDSS_CONFIG_DIR`` environment variable.
"""

from __future__ import annotations

import json
import os
from importlib import resources
from pathlib import Path
from typing import Optional

from .contracts import ModeRegistry

CONFIG_FILES = (
    "mode_registry.json",
    "safety_limits.json",
    "bandit.json",
    "detection_rules.json",
    "planner_templates.json",
    "reflect_rules.json",
)


def _packaged(name: str) -> dict:
    text = resources.files("vdss").joinpath("defaults").joinpath(name).read_text(encoding="utf-8")
    return json.loads(text)


def load_config_file(name: str, config_dir: Optional[str] = None) -> dict:
    if name not in CONFIG_FILES:
        raise ValueError(f"unknown config file {name!r}")
    directory = config_dir or os.environ.get("VDSS_CONFIG_DIR")
    if directory:
        path = Path(directory) / name
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
    return _packaged(name)


def load_registry(config_dir: Optional[str] = None) -> ModeRegistry:
    return ModeRegistry.from_config(
        load_config_file("mode_registry.json", config_dir),
        load_config_file("safety_limits.json", config_dir),
    )


def default_registry() -> ModeRegistry:
    """Registry built purely from the packaged defaults (ignores overrides)."""
    return ModeRegistry.from_config(_packaged("mode_registry.json"), _packaged("safety_limits.json"))
