"""Frame records and the on-disk sequence manifest.

A sequence directory holds one ``manifest.json`` plus one binary buffer
file per stored plane (color/depth/motion/dynamic mask). The manifest is
the single source of truth for poses, windows, timestamps, and frame roles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .buffers import read_buffer, write_buffer
from .errors import ManifestError
from .geometry import CameraPose, RenderWindow

ROLE_RENDERED = "rendered"
ROLE_GROUNDTRUTH = "groundtruth"
ROLE_EXTRAPOLATED = "extrapolated"

MANIFEST_NAME = "manifest.json"


@dataclass(eq=False)
class FrameRecord:
    """One rendered (or ground-truth) frame with its G-buffer planes.

    ``motion`` maps each pixel of this frame to the same surface point's
    pixel in the previous rendered frame: x_prev = x + motion[x], expressed
    in the previous frame's window pixel space. ``depth`` is +inf where no
    surface was hit.
    """

    color: np.ndarray      # (H, W, 3) float32, linear RGB
    depth: np.ndarray      # (H, W) float32, view depth, +inf on miss
    motion: np.ndarray     # (H, W, 2) float32, pixel offsets to frame t-1
    dyn_gt: np.ndarray     # (H, W) float32, 1 where the hit object moves
    pose: CameraPose
    window: RenderWindow
    timestamp: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


def pose_to_dict(pose: CameraPose) -> dict:
    return {
        "v_pos": [float(x) for x in pose.v_pos],
        "v_dir": [float(x) for x in pose.v_dir],
        "v_up": [float(x) for x in pose.v_up],
        "vfov": pose.vfov,
        "aspect": pose.aspect,
        "near": pose.near,
    }


def pose_from_dict(d: dict) -> CameraPose:
    return CameraPose(d["v_pos"], d["v_dir"], d["v_up"], d["vfov"], d["aspect"], d["near"])


def window_to_dict(window: RenderWindow) -> dict:
    return {
        "u0": window.u0, "v0": window.v0, "u1": window.u1, "v1": window.v1,
        "width_px": window.width_px, "height_px": window.height_px,
    }


def window_from_dict(d: dict) -> RenderWindow:
    return RenderWindow(d["u0"], d["v0"], d["u1"], d["v1"], d["width_px"], d["height_px"])


@dataclass
class FrameEntry:
    """Manifest row describing one stored frame."""

    timestamp: float
    role: str
    pose: CameraPose
    window: RenderWindow
    paths: dict[str, str]

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "role": self.role,
            "pose": pose_to_dict(self.pose),
            "window": window_to_dict(self.window),
            "paths": dict(self.paths),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrameEntry":
        return cls(float(d["timestamp"]), str(d["role"]),
                   pose_from_dict(d["pose"]), window_from_dict(d["window"]),
                   dict(d["paths"]))


@dataclass
class SequenceManifest:
    """Index of a sequence directory: scene identity, cadence, frame entries."""

    scene: str
    seed: int
    fps_in: float
    fps_out: float
    n: int
    base_width: int
    base_height: int
    frames: list[FrameEntry] = field(default_factory=list)
    scene_path: str | None = None
    config_echo: dict = field(default_factory=dict)
    root: Path | None = None

    def add_frame(self, entry: FrameEntry) -> None:
        if self.frames and entry.timestamp <= self.frames[-1].timestamp:
            raise ManifestError(
                f"timestamps must be strictly increasing: "
                f"{entry.timestamp} after {self.frames[-1].timestamp}")
        self.frames.append(entry)

    def entries(self, role: str | None = None) -> list[FrameEntry]:
        if role is None:
            return list(self.frames)
        return [f for f in self.frames if f.role == role]

    def to_dict(self) -> dict:
        d = {
            "scene": self.scene,
            "seed": self.seed,
            "fps_in": self.fps_in,
            "fps_out": self.fps_out,
            "n": self.n,
            "base_width": self.base_width,
            "base_height": self.base_height,
            "frames": [f.to_dict() for f in self.frames],
        }
        if self.scene_path is not None:
            d["scene_path"] = self.scene_path
        if self.config_echo:
            d["config_echo"] = self.config_echo
        return d

    @classmethod
    def from_dict(cls, d: dict, root: Path | None = None) -> "SequenceManifest":
        man = cls(
            scene=str(d["scene"]), seed=int(d["seed"]),
            fps_in=float(d["fps_in"]), fps_out=float(d["fps_out"]), n=int(d["n"]),
            base_width=int(d["base_width"]), base_height=int(d["base_height"]),
            scene_path=d.get("scene_path"), config_echo=dict(d.get("config_echo", {})),
            root=root,
        )
        prev = None
        for fd in d["frames"]:
            entry = FrameEntry.from_dict(fd)
            if prev is not None and entry.timestamp <= prev:
                raise ManifestError(
                    f"timestamps must be strictly increasing, got {entry.timestamp} after {prev}")
            prev = entry.timestamp
            man.frames.append(entry)
        return man

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        self.root = directory
        return path

    @classmethod
    def load(cls, directory, check_paths: bool = True) -> "SequenceManifest":
        directory = Path(directory)
        path = directory / MANIFEST_NAME if directory.is_dir() else directory
        if not path.exists():
            raise ManifestError(f"no manifest at {path}")
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: {exc}") from exc
        man = cls.from_dict(d, root=path.parent)
        if check_paths:
            missing = [p for f in man.frames for p in f.paths.values()
                       if not (man.root / p).exists()]
            if missing:
                raise ManifestError(f"missing buffer files: {missing[:5]}")
        return man

    def resolve(self, rel: str) -> Path:
        if self.root is None:
            raise ManifestError("manifest has no root directory; save or load it first")
        return self.root / rel

    def load_frame(self, entry: FrameEntry) -> FrameRecord:
        color = read_buffer(self.resolve(entry.paths["color"]))
        depth = read_buffer(self.resolve(entry.paths["depth"]))[:, :, 0]
        motion = read_buffer(self.resolve(entry.paths["motion"]))
        dyn = read_buffer(self.resolve(entry.paths["dyn"]))[:, :, 0]
        return FrameRecord(color=color, depth=depth, motion=motion, dyn_gt=dyn,
                           pose=entry.pose, window=entry.window,
                           timestamp=entry.timestamp)

    def write_frame(self, directory, stem: str, frame: FrameRecord, role: str) -> FrameEntry:
        """Write the frame's planes under ``directory`` and append an entry."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "color": f"{stem}_color.buf",
            "depth": f"{stem}_depth.buf",
            "motion": f"{stem}_motion.buf",
            "dyn": f"{stem}_dyn.buf",
        }
        write_buffer(frame.color, directory / paths["color"])
        write_buffer(frame.depth, directory / paths["depth"])
        write_buffer(frame.motion, directory / paths["motion"])
        write_buffer(frame.dyn_gt, directory / paths["dyn"])
        entry = FrameEntry(timestamp=frame.timestamp, role=role,
                           pose=frame.pose, window=frame.window, paths=paths)
        self.add_frame(entry)
        self.root = directory
        return entry
