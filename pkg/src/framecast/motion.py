"""History tracking, next-position estimation, and forward warping.

The per-pixel world-space trajectory is refreshed on every rendered frame:
a static test compares where the current surface point reprojects into the
previous frame against where the engine motion vector says it was. Pixels
that disagree are dynamic and inherit the shifted trajectory; everything
else collapses to a constant trajectory. Extrapolated positions follow the
linear motion of the last two trajectory entries, and a depth-tested
scatter projects them into the target view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StateError
from .geometry import (CameraPose, RenderWindow, map_px, project,
                       snap_floor, unproject)
from .sequence import FrameRecord

DEFAULT_EPS_STATIC = 0.5
DEFAULT_K = 2

# A dynamic pixel's trajectory lookup lands on a silhouette neighbor when
# the nearest-pixel rounding of x' crosses an object edge; the sampled
# position then belongs to a different surface. Reject samples whose view
# depth is further than this relative margin from the tracked surface.
TRAJ_DEPTH_TOL = 0.3

_SRC_BITS = 22          # source linear index packed under the float32 depth key
_SRC_LIMIT = 1 << _SRC_BITS


@dataclass(eq=False)
class HistoryState:
    """Per-pixel world trajectories and dynamic mask, aligned to one frame.

    ``traj[0]`` is the most recent position. Pixels with ``dyn == 0`` hold k
    identical entries; pixels without geometry (infinite depth) are flagged
    in ``no_geom`` and their trajectory entries are a zero sentinel.
    """

    traj: np.ndarray        # (k, H, W, 3) float64
    dyn: np.ndarray         # (H, W) uint8
    no_geom: np.ndarray     # (H, W) bool
    pose: CameraPose
    window: RenderWindow

    def __post_init__(self) -> None:
        if self.traj.shape[1:3] != self.window.shape:
            raise StateError(
                f"trajectory shape {self.traj.shape[1:3]} does not match "
                f"window {self.window.shape}")

    @property
    def k(self) -> int:
        return self.traj.shape[0]


def _unproject_grid(frame: FrameRecord) -> tuple[np.ndarray, np.ndarray]:
    """World positions of all finite-depth pixels; zeros elsewhere."""
    finite = np.isfinite(frame.depth)
    h, w = frame.shape
    pos = np.zeros((h, w, 3))
    if np.any(finite):
        centers = frame.window.pixel_centers()
        pos[finite] = unproject(centers[finite], frame.depth[finite].astype(np.float64),
                                frame.pose, frame.window)
    return pos, finite


def initial_history(frame: FrameRecord, k: int = DEFAULT_K) -> HistoryState:
    """Cold start: every pixel static with a constant trajectory."""
    pos, finite = _unproject_grid(frame)
    traj = np.broadcast_to(pos, (k,) + pos.shape).copy()
    dyn = np.zeros(frame.shape, dtype=np.uint8)
    return HistoryState(traj=traj, dyn=dyn, no_geom=~finite,
                        pose=frame.pose, window=frame.window)


def update_history(prev: HistoryState | None, frame: FrameRecord,
                   eps_static: float = DEFAULT_EPS_STATIC, k: int = DEFAULT_K) -> HistoryState:
    """Advance the trajectory state to ``frame``.

    Static test per pixel x with geometry: unproject to p, reproject into
    the previous camera as x_hat, and follow the engine motion vector to
    x' = x + V[x]. If ||x_hat - x'|| exceeds ``eps_static``, the pixel is
    dynamic: trajectory entries shift (P_i <- P'_{i-1}[x'], nearest pixel)
    and P_0 <- p. Otherwise all entries become p. Dynamic pixels fall back
    to the static branch when x' leaves the previous frame, lands on a
    no-geometry pixel, or samples a trajectory position on a clearly
    different surface (view-depth mismatch beyond TRAJ_DEPTH_TOL).
    """
    if prev is None:
        return initial_history(frame, k)
    if frame.depth.shape != frame.window.shape:
        raise StateError(f"frame buffers {frame.depth.shape} do not match "
                         f"window {frame.window.shape}")
    if prev.k != k:
        raise StateError(f"history length changed: state has k={prev.k}, requested {k}")

    pos, finite = _unproject_grid(frame)
    h, w = frame.shape
    traj = np.broadcast_to(pos, (k, h, w, 3)).copy()
    dyn = np.zeros((h, w), dtype=np.uint8)

    if np.any(finite):
        centers = frame.window.pixel_centers()
        x_hat, _, _ = project(pos[finite], prev.pose, prev.window)
        x_prime = centers[finite] + frame.motion[finite].astype(np.float64)
        dist = np.linalg.norm(x_hat - x_prime, axis=-1)

        ix = snap_floor(x_prime[:, 0])
        iy = snap_floor(x_prime[:, 1])
        ph, pw = prev.window.shape
        in_prev = (ix >= 0) & (ix < pw) & (iy >= 0) & (iy < ph)
        ix_c, iy_c = np.clip(ix, 0, pw - 1), np.clip(iy, 0, ph - 1)
        usable = in_prev & ~prev.no_geom[iy_c, ix_c]

        sampled = prev.traj[0, iy_c, ix_c]
        d_sampled = (sampled - prev.pose.v_pos) @ prev.pose.v_dir
        d_expect = (pos[finite] - prev.pose.v_pos) @ prev.pose.v_dir
        same_surface = (np.abs(d_sampled - d_expect)
                        <= TRAJ_DEPTH_TOL * np.maximum(d_expect, 1e-6))
        dynamic = (dist > eps_static) & usable & same_surface

        if np.any(dynamic):
            fy, fx = np.nonzero(finite)
            dy, dx = fy[dynamic], fx[dynamic]
            for i in range(1, k):
                traj[i, dy, dx] = prev.traj[i - 1, iy_c[dynamic], ix_c[dynamic]]
            sel = np.zeros((h, w), dtype=bool)
            sel[dy, dx] = True
            dyn[sel] = 1

    return HistoryState(traj=traj, dyn=dyn, no_geom=~finite,
                        pose=frame.pose, window=frame.window)


def estimate_positions(hist: HistoryState, alpha: float) -> np.ndarray:
    """Next world position per pixel: NP = P0 + alpha * (P0 - P1).

    Exact for constant world-space velocity; static pixels return P0.
    No-geometry pixels are NaN sentinels.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if hist.k < 2:
        raise ValueError(f"need at least 2 trajectory entries, have {hist.k}")
    p0 = hist.traj[0]
    p1 = hist.traj[1]
    np_buf = p0 + alpha * (p0 - p1)
    np_buf = np.where(hist.no_geom[:, :, None], np.nan, np_buf)
    return np_buf


@dataclass(eq=False)
class WarpOutput:
    """Forward-warp result in the target window's pixel frame.

    ``valid[x] == 0`` iff ``depth[x] == +inf`` iff no fragment landed.
    ``motion_back`` maps each valid target pixel back to its source pixel:
    x_src = x + motion_back[x], in the target window's pixel frame (the
    display frame whenever the target is the display window).
    """

    color: np.ndarray        # (H, W, 3) float32
    depth: np.ndarray        # (H, W) float32, +inf where invalid
    motion_back: np.ndarray  # (H, W, 2) float32
    valid: np.ndarray        # (H, W) uint8
    dyn_warped: np.ndarray   # (H, W) uint8
    pose: CameraPose
    window: RenderWindow

    def copy(self) -> "WarpOutput":
        return WarpOutput(self.color.copy(), self.depth.copy(), self.motion_back.copy(),
                          self.valid.copy(), self.dyn_warped.copy(), self.pose, self.window)


def depth_sort_order(depth_f32: np.ndarray, src_index: np.ndarray) -> np.ndarray:
    """Deterministic scatter order for nearest-depth-wins conflicts.

    Fragments are sorted by a packed (float32 depth bits, source index) key
    in descending order, so a plain fancy-index scatter ("last write wins")
    leaves exactly the fragment with the smallest depth at each target;
    depths equal at float32 granularity (~1e-7 relative) tie-break toward
    the smaller source index. The result is independent of scheduling.
    """
    if np.any(src_index >= _SRC_LIMIT):
        raise ValueError(f"source index exceeds {_SRC_LIMIT}; buffer too large")
    key = (depth_f32.view(np.uint32).astype(np.uint64) << _SRC_BITS) \
        | src_index.astype(np.uint64)
    return np.argsort(key)[::-1]


def forward_warp(frame: FrameRecord, hist: HistoryState, next_pos: np.ndarray,
                 target_pose: CameraPose, target_window: RenderWindow) -> WarpOutput:
    """Scatter each source fragment's estimated next position into the target.

    Colliding fragments keep the smallest view depth (ties by smaller
    source linear index); fragments projecting outside the target window
    are dropped. The winner carries its color, warped dynamic flag, and the
    back-pointing motion vector derived from the actual splat displacement.
    """
    if next_pos.shape[:2] != frame.shape or hist.traj.shape[1:3] != frame.shape:
        raise StateError("next-position buffer and history must align with the frame")

    th, tw = target_window.shape
    color = np.zeros((th, tw, 3), dtype=np.float32)
    depth = np.full((th, tw), np.inf, dtype=np.float32)
    motion_back = np.zeros((th, tw, 2), dtype=np.float32)
    valid = np.zeros((th, tw), dtype=np.uint8)
    dyn_warped = np.zeros((th, tw), dtype=np.uint8)

    src_ok = ~hist.no_geom & np.all(np.isfinite(next_pos), axis=-1)
    if np.any(src_ok):
        px, d, _ = project(next_pos[src_ok], target_pose, target_window)
        ix = snap_floor(px[:, 0])
        iy = snap_floor(px[:, 1])
        keep = (d > target_pose.near) & (ix >= 0) & (ix < tw) & (iy >= 0) & (iy < th)

        sy, sx = np.nonzero(src_ok)
        sy, sx = sy[keep], sx[keep]
        ix, iy, d = ix[keep], iy[keep], d[keep]
        src_lin = sy * frame.shape[1] + sx
        d32 = d.astype(np.float32)
        order = depth_sort_order(d32, src_lin)

        dest_lin = iy * tw + ix
        src_centers = np.stack([sx + 0.5, sy + 0.5], axis=-1)
        src_in_target = map_px(src_centers, frame.window, target_window)
        dest_centers = np.stack([ix + 0.5, iy + 0.5], axis=-1)
        mb = (src_in_target - dest_centers).astype(np.float32)

        dl = dest_lin[order]
        color.reshape(-1, 3)[dl] = frame.color[sy[order], sx[order]]
        depth.reshape(-1)[dl] = d32[order]
        motion_back.reshape(-1, 2)[dl] = mb[order]
        dyn_warped.reshape(-1)[dl] = hist.dyn[sy[order], sx[order]]
        valid.reshape(-1)[dl] = 1

    return WarpOutput(color=color, depth=depth, motion_back=motion_back,
                      valid=valid, dyn_warped=dyn_warped,
                      pose=target_pose, window=target_window)
