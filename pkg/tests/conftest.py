"""Shared builders and session-scoped synthesized sequences for the tests."""

from __future__ import annotations

import hashlib
import math
from pathlib import Path

import numpy as np
import pytest

from framecast.geometry import CameraPose, RenderWindow
from framecast.presets import PRESETS
from framecast.scene import generate_sequence
from framecast.sequence import SequenceManifest

TEST_W, TEST_H = 320, 180
TEST_ASPECT = TEST_W / TEST_H


def make_pose(pos=(0.0, 0.0, 0.0), direction=(0.0, 0.0, -1.0), up=(0.0, 1.0, 0.0),
              vfov_deg=60.0, aspect=TEST_ASPECT, near=0.1) -> CameraPose:
    return CameraPose(pos, direction, up, math.radians(vfov_deg), aspect, near)


def display(w=TEST_W, h=TEST_H) -> RenderWindow:
    return RenderWindow.display(w, h)


def dir_hash(path) -> str:
    """Content hash of every output file; wall-clock diagnostics excluded."""
    digest = hashlib.sha256()
    for p in sorted(Path(path).rglob("*")):
        if p.is_file() and p.name != "timings.json":
            digest.update(p.relative_to(path).as_posix().encode())
            digest.update(p.read_bytes())
    return digest.hexdigest()


@pytest.fixture(scope="session")
def preset_dirs(tmp_path_factory) -> dict[str, Path]:
    """One small synthesized sequence per preset, shared across the suite."""
    root = tmp_path_factory.mktemp("presets")
    dirs = {}
    frames = {"static-cam-static": 5, "pan-right": 6, "strafe-reveal": 6,
              "occluder-pan": 6, "moving-shadow": 6}
    for name, count in frames.items():
        out = root / name
        generate_sequence(PRESETS[name](seed=3), 30.0, 60.0, count, out, TEST_W, TEST_H)
        dirs[name] = out
    return dirs


@pytest.fixture(scope="session")
def preset_manifests(preset_dirs) -> dict[str, SequenceManifest]:
    return {name: SequenceManifest.load(path) for name, path in preset_dirs.items()}
