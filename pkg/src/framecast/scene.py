"""Analytic ray-cast renderer used as the ground-truth oracle.

Scenes are small scripts: spheres, axis-aligned boxes, and infinite planes
with rigid time-parameterized translations, one point light, and a scripted
camera. Ray casting (rather than rasterization) gives exact view depths and
analytically exact motion vectors, so extrapolation error bars in tests are
tight. Shading is ``albedo * (0.1 + 0.9 * max(0, n.l) * shadow)`` with a
binary occlusion shadow term; the 0.1 ambient floor keeps every surface
strictly brighter than the void, making unfilled holes unambiguous.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ManifestError
from .geometry import CameraPose, RenderWindow, project
from .sequence import FrameRecord, SequenceManifest

_AMBIENT = 0.1
_DIFFUSE = 0.9
_SHADOW_EPS = 1e-4


def _rodrigues(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * np.dot(axis, v) * (1.0 - c)


@dataclass(frozen=True)
class Trajectory:
    """Rigid translation over time; ``offset(0) == 0`` for every kind."""

    kind: str = "static"            # static | linear | accel | circular
    vel: tuple = (0.0, 0.0, 0.0)
    acc: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.0
    omega: float = 0.0
    phase: float = 0.0
    e1: tuple = (1.0, 0.0, 0.0)
    e2: tuple = (0.0, 0.0, 1.0)

    def offset(self, t: float) -> np.ndarray:
        if self.kind == "static":
            return np.zeros(3)
        if self.kind == "linear":
            return np.asarray(self.vel) * t
        if self.kind == "accel":
            return np.asarray(self.vel) * t + 0.5 * np.asarray(self.acc) * t * t
        if self.kind == "circular":
            e1, e2 = np.asarray(self.e1, dtype=float), np.asarray(self.e2, dtype=float)
            a0, a1 = self.phase, self.phase + self.omega * t
            p0 = self.radius * (math.cos(a0) * e1 + math.sin(a0) * e2)
            p1 = self.radius * (math.cos(a1) * e1 + math.sin(a1) * e2)
            return p1 - p0
        raise ValueError(f"unknown trajectory kind {self.kind!r}")

    @property
    def is_dynamic(self) -> bool:
        if self.kind == "linear":
            return bool(np.any(np.asarray(self.vel) != 0.0))
        if self.kind == "accel":
            return bool(np.any(np.asarray(self.vel) != 0.0) or np.any(np.asarray(self.acc) != 0.0))
        if self.kind == "circular":
            return self.radius != 0.0 and self.omega != 0.0
        return False

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind in ("linear", "accel"):
            d["vel"] = list(self.vel)
        if self.kind == "accel":
            d["acc"] = list(self.acc)
        if self.kind == "circular":
            d.update(radius=self.radius, omega=self.omega, phase=self.phase,
                     e1=list(self.e1), e2=list(self.e2))
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "Trajectory":
        if not d:
            return cls()
        return cls(kind=d.get("kind", "static"),
                   vel=tuple(d.get("vel", (0.0, 0.0, 0.0))),
                   acc=tuple(d.get("acc", (0.0, 0.0, 0.0))),
                   radius=float(d.get("radius", 0.0)),
                   omega=float(d.get("omega", 0.0)),
                   phase=float(d.get("phase", 0.0)),
                   e1=tuple(d.get("e1", (1.0, 0.0, 0.0))),
                   e2=tuple(d.get("e2", (0.0, 0.0, 1.0))))


@dataclass
class SceneObject:
    """Sphere, axis-aligned box, or infinite plane with an optional checker."""

    shape: str                      # sphere | box | plane
    albedo: tuple = (0.8, 0.8, 0.8)
    trajectory: Trajectory = field(default_factory=Trajectory)
    center: tuple = (0.0, 0.0, 0.0)     # sphere
    radius: float = 1.0                  # sphere
    box_min: tuple = (0.0, 0.0, 0.0)     # box
    box_max: tuple = (1.0, 1.0, 1.0)     # box
    point: tuple = (0.0, 0.0, 0.0)       # plane
    normal: tuple = (0.0, 1.0, 0.0)      # plane
    albedo2: tuple | None = None         # plane checker second color
    checker_size: float = 1.0

    def to_dict(self) -> dict:
        d = {"shape": self.shape, "albedo": list(self.albedo),
             "trajectory": self.trajectory.to_dict()}
        if self.shape == "sphere":
            d.update(center=list(self.center), radius=self.radius)
        elif self.shape == "box":
            d.update(min=list(self.box_min), max=list(self.box_max))
        elif self.shape == "plane":
            d.update(point=list(self.point), normal=list(self.normal))
            if self.albedo2 is not None:
                d.update(albedo2=list(self.albedo2), checker_size=self.checker_size)
        else:
            raise ValueError(f"unknown shape {self.shape!r}")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneObject":
        obj = cls(shape=str(d["shape"]), albedo=tuple(d.get("albedo", (0.8, 0.8, 0.8))),
                  trajectory=Trajectory.from_dict(d.get("trajectory")))
        if obj.shape == "sphere":
            obj.center, obj.radius = tuple(d["center"]), float(d["radius"])
        elif obj.shape == "box":
            obj.box_min, obj.box_max = tuple(d["min"]), tuple(d["max"])
        elif obj.shape == "plane":
            obj.point, obj.normal = tuple(d["point"]), tuple(d["normal"])
            if "albedo2" in d:
                obj.albedo2 = tuple(d["albedo2"])
                obj.checker_size = float(d.get("checker_size", 1.0))
        else:
            raise ValueError(f"unknown shape {obj.shape!r}")
        return obj


@dataclass
class CameraRig:
    """Scripted camera: static, linearly translating, or yawing at a fixed rate."""

    pos: tuple = (0.0, 1.0, 0.0)
    direction: tuple = (0.0, 0.0, -1.0)
    up: tuple = (0.0, 1.0, 0.0)
    vfov_deg: float = 60.0
    near: float = 0.1
    kind: str = "static"            # static | linear | yaw
    vel: tuple = (0.0, 0.0, 0.0)
    yaw_rate_deg: float = 0.0       # about `up`, positive turns right

    def pose_at(self, t: float, aspect: float) -> CameraPose:
        pos = np.asarray(self.pos, dtype=float)
        direction = np.asarray(self.direction, dtype=float)
        up = np.asarray(self.up, dtype=float)
        if self.kind == "linear":
            pos = pos + np.asarray(self.vel) * t
        elif self.kind == "yaw":
            pos = pos + np.asarray(self.vel) * t
            direction = _rodrigues(direction, up, -math.radians(self.yaw_rate_deg) * t)
        elif self.kind != "static":
            raise ValueError(f"unknown camera kind {self.kind!r}")
        return CameraPose(pos, direction, up, math.radians(self.vfov_deg), aspect, self.near)

    def to_dict(self) -> dict:
        return {"pos": list(self.pos), "dir": list(self.direction), "up": list(self.up),
                "vfov_deg": self.vfov_deg, "near": self.near, "kind": self.kind,
                "vel": list(self.vel), "yaw_rate_deg": self.yaw_rate_deg}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraRig":
        return cls(pos=tuple(d["pos"]), direction=tuple(d["dir"]), up=tuple(d["up"]),
                   vfov_deg=float(d["vfov_deg"]), near=float(d["near"]),
                   kind=str(d.get("kind", "static")), vel=tuple(d.get("vel", (0, 0, 0))),
                   yaw_rate_deg=float(d.get("yaw_rate_deg", 0.0)))


@dataclass
class LightRig:
    """Point light; ``pos == "camera"`` pins it to the camera position."""

    pos: tuple | str = (0.0, 8.0, 0.0)
    kind: str = "static"            # static | linear
    vel: tuple = (0.0, 0.0, 0.0)

    def pos_at(self, t: float, camera_pos: np.ndarray) -> np.ndarray:
        if isinstance(self.pos, str):
            if self.pos != "camera":
                raise ValueError(f"unknown light anchor {self.pos!r}")
            base = np.asarray(camera_pos, dtype=float)
        else:
            base = np.asarray(self.pos, dtype=float)
        if self.kind == "linear":
            base = base + np.asarray(self.vel) * t
        elif self.kind != "static":
            raise ValueError(f"unknown light kind {self.kind!r}")
        return base

    def to_dict(self) -> dict:
        pos = self.pos if isinstance(self.pos, str) else list(self.pos)
        return {"pos": pos, "kind": self.kind, "vel": list(self.vel)}

    @classmethod
    def from_dict(cls, d: dict) -> "LightRig":
        pos = d["pos"] if isinstance(d["pos"], str) else tuple(d["pos"])
        return cls(pos=pos, kind=str(d.get("kind", "static")),
                   vel=tuple(d.get("vel", (0, 0, 0))))


@dataclass
class SceneScript:
    """Everything needed to render the scene at any real timestamp."""

    name: str
    seed: int = 0
    background: tuple = (0.0, 0.0, 0.0)
    camera: CameraRig = field(default_factory=CameraRig)
    light: LightRig = field(default_factory=LightRig)
    objects: list[SceneObject] = field(default_factory=list)

    def pose_at(self, t: float, aspect: float) -> CameraPose:
        return self.camera.pose_at(t, aspect)

    def light_at(self, t: float) -> np.ndarray:
        cam_pos = np.asarray(self.camera.pos, dtype=float)
        if self.camera.kind in ("linear", "yaw"):
            cam_pos = cam_pos + np.asarray(self.camera.vel) * t
        return self.light.pos_at(t, cam_pos)

    def to_dict(self) -> dict:
        return {"name": self.name, "seed": self.seed, "background": list(self.background),
                "camera": self.camera.to_dict(), "light": self.light.to_dict(),
                "objects": [o.to_dict() for o in self.objects]}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneScript":
        return cls(name=str(d["name"]), seed=int(d.get("seed", 0)),
                   background=tuple(d.get("background", (0, 0, 0))),
                   camera=CameraRig.from_dict(d["camera"]),
                   light=LightRig.from_dict(d["light"]),
                   objects=[SceneObject.from_dict(o) for o in d.get("objects", [])])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SceneScript":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------------------
# Intersection kernels. Directions are unnormalized with a unit component
# along the view direction for primary rays, so the ray parameter equals the
# linear view depth directly.
# --------------------------------------------------------------------------

def _intersect_object(obj: SceneObject, offset: np.ndarray,
                      origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Smallest positive ray parameter per ray, +inf on miss."""
    inf = np.full(dirs.shape[:-1], np.inf)
    if obj.shape == "sphere":
        center = np.asarray(obj.center) + offset
        oc = origin - center
        a = np.sum(dirs * dirs, axis=-1)
        b = 2.0 * (dirs @ oc if oc.ndim == 1 else np.sum(dirs * oc, axis=-1))
        c = np.sum(oc * oc, axis=-1) - obj.radius ** 2
        disc = b * b - 4.0 * a * c
        hit = disc >= 0.0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        s0 = (-b - sq) / (2.0 * a)
        s1 = (-b + sq) / (2.0 * a)
        s = np.where(s0 > 1e-9, s0, s1)
        return np.where(hit & (s > 1e-9), s, inf)
    if obj.shape == "box":
        lo = np.asarray(obj.box_min) + offset
        hi = np.asarray(obj.box_max) + offset
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t0 = (lo - origin) * inv
            t1 = (hi - origin) * inv
        tmin = np.max(np.minimum(t0, t1), axis=-1)
        tmax = np.min(np.maximum(t0, t1), axis=-1)
        s = np.where(tmin > 1e-9, tmin, tmax)
        hit = (tmax >= tmin) & (s > 1e-9)
        return np.where(hit, s, inf)
    if obj.shape == "plane":
        point = np.asarray(obj.point) + offset
        normal = np.asarray(obj.normal, dtype=float)
        normal = normal / np.linalg.norm(normal)
        denom = dirs @ normal
        num = (point - origin) @ normal if origin.ndim == 1 else np.sum((point - origin) * normal, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = num / denom
        hit = (np.abs(denom) > 1e-12) & (s > 1e-9)
        return np.where(hit, s, inf)
    raise ValueError(f"unknown shape {obj.shape!r}")


def _object_normal(obj: SceneObject, offset: np.ndarray, hits: np.ndarray) -> np.ndarray:
    if obj.shape == "sphere":
        center = np.asarray(obj.center) + offset
        n = hits - center
        return n / np.linalg.norm(n, axis=-1, keepdims=True)
    if obj.shape == "box":
        lo = np.asarray(obj.box_min) + offset
        hi = np.asarray(obj.box_max) + offset
        center = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        rel = (hits - center) / half
        idx = np.argmax(np.abs(rel), axis=-1)
        n = np.zeros_like(hits)
        rows = np.arange(hits.shape[0])
        n[rows, idx] = np.sign(rel[rows, idx])
        return n
    normal = np.asarray(obj.normal, dtype=float)
    normal = normal / np.linalg.norm(normal)
    return np.broadcast_to(normal, hits.shape).copy()


def _object_albedo(obj: SceneObject, local: np.ndarray) -> np.ndarray:
    """Albedo at object-space points (N, 3); checker only for planes."""
    base = np.broadcast_to(np.asarray(obj.albedo, dtype=float), local.shape).copy()
    if obj.shape != "plane" or obj.albedo2 is None:
        return base
    normal = np.asarray(obj.normal, dtype=float)
    normal = normal / np.linalg.norm(normal)
    aux = np.array([0.0, 1.0, 0.0]) if abs(normal[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(normal, aux)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    rel = local - np.asarray(obj.point)
    u = rel @ e1
    v = rel @ e2
    parity = (np.floor(u / obj.checker_size) + np.floor(v / obj.checker_size)) % 2.0
    alt = np.asarray(obj.albedo2, dtype=float)
    return np.where(parity[:, None] == 0.0, base, alt)


def _occluded(scene: SceneScript, offsets: list[np.ndarray],
              origins: np.ndarray, light_pos: np.ndarray) -> np.ndarray:
    """True where the segment origin -> light is blocked by any object."""
    dirs = light_pos - origins
    blocked = np.zeros(origins.shape[0], dtype=bool)
    for obj, off in zip(scene.objects, offsets):
        s = _intersect_object(obj, off, origins, dirs)
        blocked |= s < 1.0 - 1e-6
    return blocked


def _render_rows(scene: SceneScript, t: float, prev_t: float, pose: CameraPose,
                 window: RenderWindow, prev_pose: CameraPose,
                 prev_window: RenderWindow, centers: np.ndarray):
    """Render the pixel-center block ``centers`` ((M, 2) continuous coords)."""
    m = centers.shape[0]
    ndc = window.px_to_ndc(centers)
    th = pose.tan_half_vfov
    dirs = (pose.v_dir
            + (ndc[:, 0] * pose.aspect * th)[:, None] * pose.right
            + (ndc[:, 1] * th)[:, None] * pose.v_up)
    origin = pose.v_pos

    offsets = [obj.trajectory.offset(t) for obj in scene.objects]
    depths = np.full(m, np.inf)
    obj_idx = np.full(m, -1, dtype=np.int64)
    for k, (obj, off) in enumerate(zip(scene.objects, offsets)):
        s = _intersect_object(obj, off, origin, dirs)
        closer = s < depths
        depths = np.where(closer, s, depths)
        obj_idx = np.where(closer, k, obj_idx)

    color = np.tile(np.asarray(scene.background, dtype=float), (m, 1))
    motion = np.zeros((m, 2))
    dyn = np.zeros(m)
    light_pos = scene.light_at(t)

    for k, (obj, off) in enumerate(zip(scene.objects, offsets)):
        sel = obj_idx == k
        if not np.any(sel):
            continue
        hit = origin + depths[sel, None] * dirs[sel]
        n = _object_normal(obj, off, hit)
        to_cam = -dirs[sel]
        if obj.shape == "plane":
            flip = np.sum(n * to_cam, axis=-1) < 0.0
            n = np.where(flip[:, None], -n, n)
        local = hit - off
        albedo = _object_albedo(obj, local)
        l_vec = light_pos - hit
        l_hat = l_vec / np.linalg.norm(l_vec, axis=-1, keepdims=True)
        lambert = np.maximum(0.0, np.sum(n * l_hat, axis=-1))
        shadow_origin = hit + _SHADOW_EPS * n
        lit = ~_occluded(scene, offsets, shadow_origin, light_pos)
        shade = _AMBIENT + _DIFFUSE * lambert * lit
        color[sel] = albedo * shade[:, None]

        # Both endpoints go through project() so static content cancels
        # bitwise and the motion buffer is exactly zero where nothing moves.
        prev_world = local + obj.trajectory.offset(prev_t)
        px_prev, _, _ = project(prev_world, prev_pose, prev_window)
        px_cur, _, _ = project(hit, pose, window)
        motion[sel] = px_prev - px_cur
        if obj.trajectory.is_dynamic:
            dyn[sel] = 1.0

    return color, depths, motion, dyn


def render(scene: SceneScript, t: float, prev_t: float, pose: CameraPose,
           window: RenderWindow, prev_pose: CameraPose | None = None,
           prev_window: RenderWindow | None = None, workers: int = 1) -> FrameRecord:
    """Render one frame with exact depth, motion vectors, and dynamic mask.

    ``motion`` maps pixel x of this frame to the same surface point's pixel
    in the frame at ``prev_t``: x_prev = x + motion[x] in the previous
    window's pixel space. ``prev_pose``/``prev_window`` default to the
    scripted camera at ``prev_t`` with the same window.
    """
    if prev_t >= t:
        raise ValueError(f"prev_t must precede t, got {prev_t} >= {t}")
    if prev_pose is None:
        prev_pose = scene.pose_at(prev_t, pose.aspect)
    if prev_window is None:
        prev_window = window

    h, w = window.height_px, window.width_px
    centers = window.pixel_centers().reshape(-1, 2)
    if workers <= 1:
        chunks = [centers]
    else:
        rows = np.array_split(np.arange(h), min(workers, h))
        chunks = [centers[r[0] * w:(r[-1] + 1) * w] for r in rows if len(r)]

    def run(chunk):
        return _render_rows(scene, t, prev_t, pose, window, prev_pose, prev_window, chunk)

    if len(chunks) == 1:
        parts = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(run, chunks))

    color = np.concatenate([p[0] for p in parts]).reshape(h, w, 3)
    depth = np.concatenate([p[1] for p in parts]).reshape(h, w)
    motion = np.concatenate([p[2] for p in parts]).reshape(h, w, 2)
    dyn = np.concatenate([p[3] for p in parts]).reshape(h, w)
    return FrameRecord(color=color.astype(np.float32), depth=depth.astype(np.float32),
                       motion=motion.astype(np.float32), dyn_gt=dyn.astype(np.float32),
                       pose=pose, window=window, timestamp=t)


def generate_sequence(scene: SceneScript, fps_in: float, fps_out: float,
                      frame_count: int, out_dir, width: int, height: int,
                      window_provider=None, workers: int = 1) -> SequenceManifest:
    """Render a sequence: frames at fps_in cadence plus in-between ground truth.

    ``window_provider(index, t, pose) -> RenderWindow`` supplies each
    rendered frame's window (display rectangle when omitted); ground-truth
    frames always use the display window. fps_out must be an integer
    multiple (n + 1) of fps_in.
    """
    ratio = fps_out / fps_in
    n = round(ratio) - 1
    if n < 1 or abs(ratio - round(ratio)) > 1e-9:
        raise ManifestError(
            f"fps_out must be an integer multiple >= 2 of fps_in, got {fps_in}/{fps_out}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    aspect = width / height
    dt = 1.0 / fps_in

    manifest = SequenceManifest(scene=scene.name, seed=scene.seed, fps_in=fps_in,
                                fps_out=fps_out, n=n, base_width=width, base_height=height,
                                scene_path="scene.json")
    scene.save(out_dir / "scene.json")

    display = RenderWindow.display(width, height)
    prev_pose: CameraPose | None = None
    prev_window: RenderWindow | None = None
    prev_t = 0.0
    for i in range(frame_count):
        t = i * dt
        pose = scene.pose_at(t, aspect)
        window = display
        if window_provider is not None:
            window = window_provider(i, t, pose)
        frame = render(scene, t, t - dt if i == 0 else prev_t, pose, window,
                       prev_pose, prev_window, workers=workers)
        manifest.write_frame(out_dir, f"r{i:04d}", frame, role="rendered")
        if i + 1 < frame_count:
            for j in range(1, n + 1):
                tg = t + j * dt / (n + 1)
                gt_pose = scene.pose_at(tg, aspect)
                gt = render(scene, tg, t, gt_pose, display, pose, window, workers=workers)
                manifest.write_frame(out_dir, f"g{i:04d}_{j}", gt, role="groundtruth")
        prev_pose, prev_window, prev_t = pose, window, t

    manifest.save(out_dir)
    return manifest
