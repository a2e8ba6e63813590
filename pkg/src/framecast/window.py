"""Camera pose prediction and the adaptive asymmetric rendering window.

The next camera pose is extrapolated per-component from the last two
rendered poses. A virtual plane perpendicular to the current view direction
catches both cameras' frustum-corner rays; the ratios of the two footprint
bounding boxes give the enlarged NDC window, which never shrinks below the
display rectangle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import CameraPose, RenderWindow, map_px

DEFAULT_MAX_EXTENT = 1.5
DENSITY_PRESERVING = "density"
FIXED_BUDGET = "budget"


@dataclass
class WindowPlan:
    """Predicted camera plus the render window that covers both views."""

    predicted_pose: CameraPose
    window: RenderWindow
    plane_distance: float
    aabb_cur: tuple[float, float, float, float]
    aabb_pred: tuple[float, float, float, float]
    flagged: bool = False


def predict_pose(cur: CameraPose, prev: CameraPose, alpha: float) -> tuple[CameraPose, bool]:
    """Extrapolate each pose vector: C + alpha * (C - C_prev).

    Direction and up are renormalized/orthogonalized; projection parameters
    are copied from ``cur``. Returns (pose, degenerate): a near-zero
    extrapolated direction falls back to the current direction and sets the
    flag.
    """
    pos = cur.v_pos + alpha * (cur.v_pos - prev.v_pos)
    direction = cur.v_dir + alpha * (cur.v_dir - prev.v_dir)
    up = cur.v_up + alpha * (cur.v_up - prev.v_up)
    degenerate = False
    if np.linalg.norm(direction) < 1e-6:
        direction = cur.v_dir
        degenerate = True
    if np.linalg.norm(up) < 1e-6 or np.linalg.norm(np.cross(direction, up)) < 1e-6:
        up = cur.v_up
        degenerate = True
    return CameraPose(pos, direction, up, cur.vfov, cur.aspect, cur.near), degenerate


def _corner_dirs(pose: CameraPose) -> np.ndarray:
    """Unnormalized rays through the four display-window frustum corners."""
    t = pose.tan_half_vfov
    a = pose.aspect * t
    corners = []
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            corners.append(pose.v_dir + sx * a * pose.right + sy * t * pose.v_up)
    return np.stack(corners)


def compute_window(cur: CameraPose, predicted: CameraPose, d: float,
                   max_extent: float = DEFAULT_MAX_EXTENT) -> WindowPlan:
    """Window (u0, v0, u1, v1) covering both footprints on the virtual plane.

    The plane sits perpendicular to ``cur.v_dir`` at distance ``d``; corner
    rays of both cameras intersect it and their axis-aligned bounding boxes
    r and r_pred give u0 = min(-1, -x̄min/xmin), u1 = max(1, x̄max/xmax)
    (same for v). A predicted corner ray parallel to the plane, or leaving
    it backwards, clamps that bound to ``max_extent`` and flags the plan.
    Pixel dimensions are left at 0 and must be filled by the caller via
    :func:`window_pixels`.
    """
    if d <= cur.near:
        raise ValueError(f"plane distance {d} must exceed near {cur.near}")
    origin = cur.v_pos + d * cur.v_dir
    e1, e2 = cur.right, cur.v_up

    # Current camera: corner rays hit the plane at exactly +-d*tan extents.
    t = cur.tan_half_vfov
    x_max, y_max = d * cur.aspect * t, d * t
    aabb_cur = (-x_max, -y_max, x_max, y_max)

    flagged = False
    same_pose = (np.array_equal(predicted.v_pos, cur.v_pos)
                 and np.array_equal(predicted.v_dir, cur.v_dir)
                 and np.array_equal(predicted.v_up, cur.v_up)
                 and (predicted.vfov, predicted.aspect) == (cur.vfov, cur.aspect))
    pts = []
    if not same_pose:
        for cd in _corner_dirs(predicted):
            denom = float(cd @ cur.v_dir)
            num = float((origin - predicted.v_pos) @ cur.v_dir)
            if denom <= 1e-9 or num <= 0.0:
                flagged = True
                continue
            p = predicted.v_pos + (num / denom) * cd
            rel = p - origin
            pts.append((float(rel @ e1), float(rel @ e2)))
    if pts:
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        aabb_pred = (min(xs), min(ys), max(xs), max(ys))
    else:
        # identical pose (exact fixed point) or nothing usable
        aabb_pred = aabb_cur
    if flagged:
        aabb_pred = (min(aabb_pred[0], -max_extent * x_max),
                     min(aabb_pred[1], -max_extent * y_max),
                     max(aabb_pred[2], max_extent * x_max),
                     max(aabb_pred[3], max_extent * y_max))

    u0 = min(-1.0, -aabb_pred[0] / aabb_cur[0])
    v0 = min(-1.0, -aabb_pred[1] / aabb_cur[1])
    u1 = max(1.0, aabb_pred[2] / aabb_cur[2])
    v1 = max(1.0, aabb_pred[3] / aabb_cur[3])
    u0, v0 = max(u0, -max_extent), max(v0, -max_extent)
    u1, v1 = min(u1, max_extent), min(v1, max_extent)

    window = RenderWindow(u0, v0, u1, v1, 1, 1)
    return WindowPlan(predicted_pose=predicted, window=window, plane_distance=d,
                      aabb_cur=aabb_cur, aabb_pred=aabb_pred, flagged=flagged)


def window_pixels(window: RenderWindow, base_w: int, base_h: int,
                  mode: str = DENSITY_PRESERVING) -> tuple[int, int]:
    """Pixel dimensions for a window rectangle.

    density-preserving: the display region keeps at least the base pixel
    density (dimensions scale with the NDC spans, rounded up). fixed-budget:
    the buffer stays at base_w x base_h regardless of window size, trading
    display-region sharpness for a constant pixel budget.
    """
    if base_w < 1 or base_h < 1:
        raise ValueError("base dimensions must be >= 1")
    if mode == FIXED_BUDGET:
        return base_w, base_h
    if mode != DENSITY_PRESERVING:
        raise ValueError(f"unknown window pixel mode {mode!r}")
    su = (window.u1 - window.u0) / 2.0
    sv = (window.v1 - window.v0) / 2.0
    return (math.ceil(base_w * su - 1e-9), math.ceil(base_h * sv - 1e-9))


def snap_window_to_grid(window: RenderWindow, base_w: int,
                        base_h: int) -> RenderWindow:
    """Expand a window outward to whole display-pixel multiples.

    The resulting buffer grid is the display grid extended by integer pixel
    counts on each side, so enlarged renders sample exactly the display
    pixel centers (plus extras) and display crops are exact sub-arrays.
    """
    left = math.ceil((-1.0 - window.u0) * base_w / 2.0 - 1e-9)
    right = math.ceil((window.u1 - 1.0) * base_w / 2.0 - 1e-9)
    bottom = math.ceil((-1.0 - window.v0) * base_h / 2.0 - 1e-9)
    top = math.ceil((window.v1 - 1.0) * base_h / 2.0 - 1e-9)
    return RenderWindow(-1.0 - left * 2.0 / base_w, -1.0 - bottom * 2.0 / base_h,
                        1.0 + right * 2.0 / base_w, 1.0 + top * 2.0 / base_h,
                        base_w + left + right, base_h + bottom + top)


def plan_window(cur: CameraPose, prev: CameraPose, alpha: float, d: float,
                base_w: int, base_h: int, mode: str = DENSITY_PRESERVING,
                max_extent: float = DEFAULT_MAX_EXTENT) -> WindowPlan:
    """predict_pose + compute_window + pixel-dimension assignment in one step.

    Density-preserving plans are snapped outward to the display pixel grid
    (see :func:`snap_window_to_grid`); fixed-budget plans keep the raw
    rectangle at base resolution.
    """
    predicted, degenerate = predict_pose(cur, prev, alpha)
    plan = compute_window(cur, predicted, d, max_extent)
    if mode == DENSITY_PRESERVING:
        plan.window = snap_window_to_grid(plan.window, base_w, base_h)
    else:
        w, h = window_pixels(plan.window, base_w, base_h, mode)
        plan.window = RenderWindow(plan.window.u0, plan.window.v0,
                                   plan.window.u1, plan.window.v1, w, h)
    plan.flagged = plan.flagged or degenerate
    return plan


def crop_to_display(buffer: np.ndarray, window: RenderWindow,
                    base_w: int, base_h: int) -> np.ndarray:
    """Resample the display rectangle of ``buffer`` to base resolution.

    Identity when the window is the display rectangle at base resolution.
    When the display pixel grid aligns exactly with the buffer grid the
    crop is an exact sub-array copy; otherwise bilinear with edge clamping.
    """
    buf = np.asarray(buffer)
    if buf.shape[:2] != window.shape:
        raise ValueError(f"buffer {buf.shape[:2]} does not match window {window.shape}")
    display = RenderWindow.display(base_w, base_h)
    if window.is_display and (window.width_px, window.height_px) == (base_w, base_h):
        return buf.copy()

    centers = display.pixel_centers()
    src = map_px(centers, display, window)
    sx, sy = src[..., 0], src[..., 1]

    # Exact sub-grid: unit spacing and half-integer sample positions.
    x0, y0 = sx[0, 0], sy[0, 0]
    unit = (window.width_px >= base_w
            and abs(sx[0, 1] - sx[0, 0] - 1.0) < 1e-9
            and abs(sy[1, 0] - sy[0, 0] - 1.0) < 1e-9
            and abs((x0 - 0.5) - round(x0 - 0.5)) < 1e-9
            and abs((y0 - 0.5) - round(y0 - 0.5)) < 1e-9)
    if unit:
        ix = int(round(x0 - 0.5))
        iy = int(round(y0 - 0.5))
        return buf[iy:iy + base_h, ix:ix + base_w].copy()

    fx = np.clip(sx - 0.5, 0.0, window.width_px - 1.0)
    fy = np.clip(sy - 0.5, 0.0, window.height_px - 1.0)
    x0i = np.floor(fx).astype(np.int64)
    y0i = np.floor(fy).astype(np.int64)
    x1i = np.minimum(x0i + 1, window.width_px - 1)
    y1i = np.minimum(y0i + 1, window.height_px - 1)
    wx = (fx - x0i)[..., None] if buf.ndim == 3 else (fx - x0i)
    wy = (fy - y0i)[..., None] if buf.ndim == 3 else (fy - y0i)
    top = buf[y0i, x0i] * (1.0 - wx) + buf[y0i, x1i] * wx
    bot = buf[y1i, x0i] * (1.0 - wx) + buf[y1i, x1i] * wx
    out = top * (1.0 - wy) + bot * wy
    return out.astype(buf.dtype, copy=False)
