"""Camera model, projection math, and the extrapolation schedule.

Conventions used everywhere in this package:

* right-handed world space; the camera looks along ``v_dir`` with ``v_up``
  pointing up and ``right = v_dir x v_up``,
* NDC has y up and the display rectangle is ``(-1, -1, 1, 1)``,
* pixel origin is the top-left corner with y down; pixel centers sit at
  half-integer coordinates ``(i + 0.5, j + 0.5)``,
* depth is positive linear view-space depth, measured along ``v_dir``
  (not ray length, not post-projective z).

A :class:`RenderWindow` generalizes the display rectangle: it is an NDC
rectangle that always contains ``(-1, -1, 1, 1)`` plus the pixel dimensions
of the buffer covering it, which is how asymmetric enlarged viewports are
represented.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

_UNIT_TOL = 1e-6


def _as_unit(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be a finite 3-vector, got {v!r}")
    n = float(np.linalg.norm(v))
    if n < _UNIT_TOL:
        raise ValueError(f"{name} has near-zero norm {n:.3e}")
    return v / n


@dataclass(eq=False)
class CameraPose:
    """Position/orientation plus the projection parameters of one camera.

    ``v_up`` is re-orthogonalized against ``v_dir`` on construction, so
    slightly drifting up vectors from scripted paths are accepted.
    """

    v_pos: np.ndarray
    v_dir: np.ndarray
    v_up: np.ndarray
    vfov: float
    aspect: float
    near: float

    def __post_init__(self) -> None:
        self.v_pos = np.asarray(self.v_pos, dtype=np.float64)
        if self.v_pos.shape != (3,) or not np.all(np.isfinite(self.v_pos)):
            raise ValueError(f"v_pos must be a finite 3-vector, got {self.v_pos!r}")
        self.v_dir = _as_unit(self.v_dir, "v_dir")
        up = _as_unit(self.v_up, "v_up")
        up = up - np.dot(up, self.v_dir) * self.v_dir
        n = float(np.linalg.norm(up))
        if n < _UNIT_TOL:
            raise ValueError("v_up is parallel to v_dir")
        self.v_up = up / n
        self.vfov = float(self.vfov)
        self.aspect = float(self.aspect)
        self.near = float(self.near)
        if not (0.0 < self.vfov < math.pi):
            raise ValueError(f"vfov must be in (0, pi), got {self.vfov}")
        if self.aspect <= 0.0:
            raise ValueError(f"aspect must be positive, got {self.aspect}")
        if self.near <= 0.0:
            raise ValueError(f"near must be positive, got {self.near}")

    @property
    def right(self) -> np.ndarray:
        return np.cross(self.v_dir, self.v_up)

    @property
    def tan_half_vfov(self) -> float:
        return math.tan(0.5 * self.vfov)

    def basis(self) -> np.ndarray:
        """Rows are (right, up, forward): world->camera rotation."""
        return np.stack([self.right, self.v_up, self.v_dir])

    def with_projection_of(self, other: "CameraPose") -> "CameraPose":
        """Same orientation/position, projection parameters copied from ``other``."""
        return CameraPose(self.v_pos, self.v_dir, self.v_up,
                          other.vfov, other.aspect, other.near)


@dataclass(frozen=True)
class RenderWindow:
    """NDC rectangle covered by a buffer, plus the buffer's pixel dimensions.

    The display rectangle is (-1, -1, 1, 1); a window always contains it.
    """

    u0: float
    v0: float
    u1: float
    v1: float
    width_px: int
    height_px: int

    def __post_init__(self) -> None:
        if not (self.u0 <= -1.0 <= 1.0 <= self.u1 and self.v0 <= -1.0 <= 1.0 <= self.v1):
            raise ValueError(
                f"window ({self.u0}, {self.v0}, {self.u1}, {self.v1}) "
                "does not contain the display rectangle (-1, -1, 1, 1)")
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError(f"pixel dims must be >= 1, got {self.width_px}x{self.height_px}")

    @classmethod
    def display(cls, width_px: int, height_px: int) -> "RenderWindow":
        return cls(-1.0, -1.0, 1.0, 1.0, width_px, height_px)

    @property
    def is_display(self) -> bool:
        return (self.u0, self.v0, self.u1, self.v1) == (-1.0, -1.0, 1.0, 1.0)

    @property
    def shape(self) -> tuple[int, int]:
        """(height, width) array shape of buffers covering this window."""
        return (self.height_px, self.width_px)

    def ndc_rect(self) -> tuple[float, float, float, float]:
        return (self.u0, self.v0, self.u1, self.v1)

    def at_level(self, level: int) -> "RenderWindow":
        """Same NDC rectangle at half resolution per level (pyramid layout)."""
        return RenderWindow(self.u0, self.v0, self.u1, self.v1,
                            max(1, self.width_px >> level),
                            max(1, self.height_px >> level))

    def px_to_ndc(self, px: np.ndarray) -> np.ndarray:
        """Continuous pixel coordinates (..., 2) -> NDC coordinates (..., 2)."""
        px = np.asarray(px, dtype=np.float64)
        u = self.u0 + (px[..., 0] / self.width_px) * (self.u1 - self.u0)
        v = self.v1 - (px[..., 1] / self.height_px) * (self.v1 - self.v0)
        return np.stack([u, v], axis=-1)

    def ndc_to_px(self, ndc: np.ndarray) -> np.ndarray:
        """NDC coordinates (..., 2) -> continuous pixel coordinates (..., 2)."""
        ndc = np.asarray(ndc, dtype=np.float64)
        x = (ndc[..., 0] - self.u0) / (self.u1 - self.u0) * self.width_px
        y = (self.v1 - ndc[..., 1]) / (self.v1 - self.v0) * self.height_px
        return np.stack([x, y], axis=-1)

    def pixel_centers(self) -> np.ndarray:
        """(H, W, 2) read-only array of pixel-center coordinates (cached)."""
        return _pixel_centers_cached(self.width_px, self.height_px)


PX_SNAP_BITS = 10


def snap_floor(px: np.ndarray) -> np.ndarray:
    """Floor of pixel coordinates after 1/1024-px fixed-point snapping.

    Scatter targets can land mathematically on pixel boundaries (e.g. a
    fronto-parallel surface whose resampled velocity is an odd integer pixel
    count split in half); raw floor() would then flip per element on
    floating-point dust. Snapping to a fixed-point grid first makes the
    choice deterministic and dust-immune, like rasterizer vertex snapping.
    """
    fixed = np.round(np.asarray(px) * float(1 << PX_SNAP_BITS))
    return np.right_shift(fixed.astype(np.int64), PX_SNAP_BITS)


@functools.lru_cache(maxsize=8)
def _pixel_centers_cached(width_px: int, height_px: int) -> np.ndarray:
    xs = np.arange(width_px, dtype=np.float64) + 0.5
    ys = np.arange(height_px, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    centers = np.stack([gx, gy], axis=-1)
    centers.flags.writeable = False
    return centers


@dataclass(frozen=True)
class ExtrapolationSchedule:
    """Which of the n generated frames per rendered frame this one is."""

    n: int
    j: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not (1 <= self.j <= self.n):
            raise ValueError(f"j must be in [1, {self.n}], got {self.j}")

    @property
    def alpha(self) -> float:
        return self.j / (self.n + 1)


def schedule_alphas(n: int) -> list[float]:
    """The n extrapolation factors j/(n+1), j = 1..n, all strictly in (0, 1)."""
    return [ExtrapolationSchedule(n, j).alpha for j in range(1, n + 1)]


def pixel_map(src: RenderWindow, dst: RenderWindow) -> tuple[float, float, float, float]:
    """Affine map (sx, ox, sy, oy) taking src pixel coords to dst pixel coords.

    ``x_dst = sx * x_src + ox`` and likewise for y. Built so that mapping a
    window onto itself is exactly the identity (scale 1.0, offset 0.0),
    which keeps zero-motion paths bit-exact.
    """
    du_s, dv_s = src.u1 - src.u0, src.v1 - src.v0
    du_d, dv_d = dst.u1 - dst.u0, dst.v1 - dst.v0
    sx = (du_s / du_d) * (dst.width_px / src.width_px)
    ox = (src.u0 - dst.u0) / du_d * dst.width_px
    sy = (dv_s / dv_d) * (dst.height_px / src.height_px)
    oy = (dst.v1 - src.v1) / dv_d * dst.height_px
    return sx, ox, sy, oy


def map_px(px: np.ndarray, src: RenderWindow, dst: RenderWindow) -> np.ndarray:
    """Apply :func:`pixel_map` to (..., 2) pixel coordinates."""
    sx, ox, sy, oy = pixel_map(src, dst)
    px = np.asarray(px, dtype=np.float64)
    return np.stack([px[..., 0] * sx + ox, px[..., 1] * sy + oy], axis=-1)


def unproject(px, depth, pose: CameraPose, window: RenderWindow) -> np.ndarray:
    """Pixel coordinates + linear view depth -> world-space point.

    ``px`` is (..., 2) continuous pixel coordinates in ``window``'s pixel
    space; ``depth`` broadcasts against its leading shape. Raises ValueError
    on non-finite or non-positive depth and on pixels outside the buffer.
    """
    px = np.asarray(px, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if not np.all(np.isfinite(px)):
        raise ValueError("pixel coordinates must be finite")
    if not np.all(np.isfinite(depth)) or np.any(depth <= 0.0):
        raise ValueError("depth must be finite and positive")
    x, y = px[..., 0], px[..., 1]
    if (np.any(x < 0.0) or np.any(x > window.width_px)
            or np.any(y < 0.0) or np.any(y > window.height_px)):
        raise ValueError("pixel coordinates outside the window's pixel bounds")
    ndc = window.px_to_ndc(px)
    t = pose.tan_half_vfov
    cam = np.empty(ndc.shape[:-1] + (3,), dtype=np.float64)
    cam[..., 0] = ndc[..., 0] * (pose.aspect * t) * depth
    cam[..., 1] = ndc[..., 1] * t * depth
    cam[..., 2] = depth
    return cam @ pose.basis() + pose.v_pos


def project(p, pose: CameraPose, window: RenderWindow):
    """World point(s) -> (pixel coordinates, view depth, in_frustum flag).

    ``in_frustum`` is False when the view depth is <= near or the NDC falls
    outside the window rectangle; out-of-frustum is a flag, never an error.
    Pixel coordinates are still returned for diagnostic use (they are
    meaningless for points at or behind the eye plane).
    """
    p = np.asarray(p, dtype=np.float64)
    cam = (p - pose.v_pos) @ pose.basis().T
    x_cam, y_cam, d = cam[..., 0], cam[..., 1], cam[..., 2]
    t = pose.tan_half_vfov
    with np.errstate(divide="ignore", invalid="ignore"):
        ndc_x = x_cam / (d * pose.aspect * t)
        ndc_y = y_cam / (d * t)
    inside = ((d > pose.near)
              & (ndc_x >= window.u0) & (ndc_x <= window.u1)
              & (ndc_y >= window.v0) & (ndc_y <= window.v1))
    px = window.ndc_to_px(np.stack([ndc_x, ndc_y], axis=-1))
    return px, d, inside


def make_projection(pose: CameraPose, window: RenderWindow) -> np.ndarray:
    """4x4 view-projection transform consistent with :func:`project`.

    Maps homogeneous world points to clip space such that after the
    perspective divide, clip x/y in [-1, 1] span the window rectangle of the
    base symmetric frustum. The z row maps depth=near to 0 and depth=inf
    to 1 (linear-in-1/depth), which is informational only: all depth
    handling in this package uses linear view depth.
    """
    du = window.u1 - window.u0
    dv = window.v1 - window.v0
    if du <= 0.0 or dv <= 0.0:
        raise ValueError(f"degenerate window rectangle ({window.u0}, {window.v0}, "
                         f"{window.u1}, {window.v1})")
    t = pose.tan_half_vfov
    r, u, f = pose.right, pose.v_up, pose.v_dir
    view = np.eye(4)
    view[0, :3], view[1, :3], view[2, :3] = r, u, f
    view[:3, 3] = -view[:3, :3] @ pose.v_pos

    proj = np.zeros((4, 4))
    proj[0, 0] = 2.0 / (pose.aspect * t * du)
    proj[0, 2] = -(window.u0 + window.u1) / du
    proj[1, 1] = 2.0 / (t * dv)
    proj[1, 2] = -(window.v0 + window.v1) / dv
    proj[2, 2] = 1.0
    proj[2, 3] = -pose.near
    proj[3, 2] = 1.0
    return proj @ view
