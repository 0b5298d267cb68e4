"""Bundled data files."""

from pathlib import Path


def demo_scene_path() -> Path:
    """Path to the packaged demo scene."""
    return Path(__file__).resolve().parent / "demo_scene.json"
