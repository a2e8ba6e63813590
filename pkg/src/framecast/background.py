"""Hierarchical background pyramid: collect static fragments, fill disocclusions.

Level 0 holds the current frame's static fragments plus carried-over static
content that the current frame cannot see (e.g. behind dynamic objects).
Each deeper level is quarter-area and holds fragments that lost a depth
conflict one level up, i.e. geometry behind the level above it. Projection
into an extrapolated view fills only pixels that forward warping left
invalid; a level-l texel stamps a 2^l x 2^l pixel footprint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StateError
from .geometry import (CameraPose, RenderWindow, map_px, project,
                       snap_floor, unproject)
from .motion import WarpOutput, _SRC_BITS, _SRC_LIMIT
from .sequence import FrameRecord

DEFAULT_LEVELS = 2
DEFAULT_REL_EPS = 1e-3

_LEVEL_BITS = 3


@dataclass(eq=False)
class BackgroundLevel:
    color: np.ndarray   # (h, w, 3) float32
    depth: np.ndarray   # (h, w) float32, current-view depth, +inf where invalid
    valid: np.ndarray   # (h, w) uint8


@dataclass(eq=False)
class BackgroundPyramid:
    """L levels of (color, depth, valid), aligned to one camera and window."""

    levels: list[BackgroundLevel]
    pose: CameraPose
    window: RenderWindow

    @property
    def depth_count(self) -> int:
        return len(self.levels)

    def level_window(self, level: int) -> RenderWindow:
        return self.window.at_level(level)


def _empty_level(window: RenderWindow, level: int) -> BackgroundLevel:
    h, w = window.at_level(level).shape
    return BackgroundLevel(color=np.zeros((h, w, 3), dtype=np.float32),
                           depth=np.full((h, w), np.inf, dtype=np.float32),
                           valid=np.zeros((h, w), dtype=np.uint8))


def empty_pyramid(pose: CameraPose, window: RenderWindow,
                  levels: int = DEFAULT_LEVELS) -> BackgroundPyramid:
    return BackgroundPyramid(levels=[_empty_level(window, l) for l in range(levels)],
                             pose=pose, window=window)


def _reproject_level(pyr: BackgroundPyramid, level: int, new_pose: CameraPose,
                     new_window: RenderWindow):
    """Valid texels of ``pyr.levels[level]`` reprojected into the new view.

    Returns (tx, ty, new_depth_f32, color) at the new window's level-`level`
    resolution, already filtered to the new buffer bounds and to fragments
    in front of the near plane.
    """
    lvl = pyr.levels[level]
    sel = lvl.valid.astype(bool)
    if not np.any(sel):
        return (np.empty(0, np.int64), np.empty(0, np.int64),
                np.empty(0, np.float32), np.empty((0, 3), np.float32))
    src_win = pyr.level_window(level)
    centers = src_win.pixel_centers()[sel]
    world = unproject(centers, lvl.depth[sel].astype(np.float64), pyr.pose, src_win)
    dst_win = new_window.at_level(level)
    px, d, _ = project(world, new_pose, dst_win)
    tx = snap_floor(px[:, 0])
    ty = snap_floor(px[:, 1])
    h, w = dst_win.shape
    keep = (d > new_pose.near) & (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    return (tx[keep], ty[keep], d[keep].astype(np.float32), lvl.color[sel][keep])


def update_background(prev: BackgroundPyramid | None, frame: FrameRecord,
                      dyn: np.ndarray, rel_eps: float = DEFAULT_REL_EPS,
                      levels: int = DEFAULT_LEVELS) -> BackgroundPyramid:
    """Re-align the pyramid to the current frame and fold the old content in.

    Level 0 is seeded from the frame's static fragments. Reprojected texels
    of the previous pyramid either fill invalid texels of the same level
    (smallest depth wins among candidates) or, when blocked by a strictly
    nearer occupant (relative margin ``rel_eps``), drop one level down at
    half resolution. Deepest-level overflow is discarded.
    """
    if dyn.shape != frame.shape:
        raise StateError(f"dynamic mask {dyn.shape} does not match frame {frame.shape}")
    out = empty_pyramid(frame.pose, frame.window, levels)

    seed = (dyn == 0) & np.isfinite(frame.depth)
    lvl0 = out.levels[0]
    lvl0.color[seed] = frame.color[seed]
    lvl0.depth[seed] = frame.depth[seed]
    lvl0.valid[seed] = 1

    # Promotions pending insertion at each level: (tx, ty, depth, color).
    pending = (np.empty(0, np.int64), np.empty(0, np.int64),
               np.empty(0, np.float32), np.empty((0, 3), np.float32))
    for level in range(levels):
        if prev is not None and level < prev.depth_count:
            rx, ry, rd, rc = _reproject_level(prev, level, frame.pose, frame.window)
        else:
            rx = np.empty(0, np.int64)
            ry, rd, rc = rx.copy(), np.empty(0, np.float32), np.empty((0, 3), np.float32)
        tx = np.concatenate([rx, pending[0]])
        ty = np.concatenate([ry, pending[1]])
        td = np.concatenate([rd, pending[2]])
        tc = np.concatenate([rc, pending[3]])
        if tx.size == 0:
            pending = (tx, ty, td, tc)
            continue

        lvl = out.levels[level]
        h, w = lvl.depth.shape
        dest = ty * w + tx
        seeded = lvl.valid.reshape(-1).astype(bool)

        # Fill unseeded texels, smallest depth first (ties by candidate order).
        seq = np.arange(tx.size, dtype=np.uint64)
        if tx.size >= _SRC_LIMIT:
            raise StateError("too many background candidates for one level")
        key = (td.view(np.uint32).astype(np.uint64) << _SRC_BITS) | seq
        order = np.argsort(key)[::-1]
        fillable = ~seeded[dest]
        of = order[fillable[order]]
        lvl.color.reshape(-1, 3)[dest[of]] = tc[of]
        lvl.depth.reshape(-1)[dest[of]] = td[of]
        lvl.valid.reshape(-1)[dest[of]] = 1

        # Candidates strictly behind the final occupant sink one level down.
        occ = lvl.depth.reshape(-1)[dest]
        deeper = td > occ * (1.0 + rel_eps)
        if level + 1 < levels:
            pending = (tx[deeper] // 2, ty[deeper] // 2, td[deeper], tc[deeper])
        else:
            pending = (np.empty(0, np.int64), np.empty(0, np.int64),
                       np.empty(0, np.float32), np.empty((0, 3), np.float32))
    return out


def dump_pyramid(pyr: BackgroundPyramid, directory, stem: str = "background") -> list:
    """Debug dump: one color PNG and one validity PNG per level."""
    from pathlib import Path

    from .buffers import export_png, gray_to_rgb

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for level, lvl in enumerate(pyr.levels):
        color_path = directory / f"{stem}_l{level}_color.png"
        valid_path = directory / f"{stem}_l{level}_valid.png"
        export_png(lvl.color, color_path)
        export_png(gray_to_rgb(lvl.valid.astype(np.float32)), valid_path)
        written += [color_path, valid_path]
    return written


def project_background(pyr: BackgroundPyramid, warp: WarpOutput,
                       target_pose: CameraPose, target_window: RenderWindow) -> WarpOutput:
    """Fill the warp's invalid pixels from the pyramid; valid pixels are untouched.

    All levels compete by target-view depth (ties by shallower level, then
    candidate order). Filled pixels get color, depth, a back-pointing motion
    vector through the pyramid's camera, dyn_warped = 0, and valid = 1.
    """
    out = warp.copy()
    th, tw = target_window.shape
    if out.depth.shape != (th, tw):
        raise StateError(f"warp {out.depth.shape} does not match target window {(th, tw)}")
    invalid_flat = (out.valid.reshape(-1) == 0)
    if not np.any(invalid_flat):
        return out

    cand = []
    for level in range(pyr.depth_count):
        lvl = pyr.levels[level]
        sel = lvl.valid.astype(bool)
        if not np.any(sel):
            continue
        src_win = pyr.level_window(level)
        centers = src_win.pixel_centers()[sel]
        world = unproject(centers, lvl.depth[sel].astype(np.float64), pyr.pose, src_win)
        px, d, _ = project(world, target_pose, target_window)
        front = d > target_pose.near
        if not np.any(front):
            continue
        px, d, world = px[front], d[front], world[front]
        colors = lvl.color[sel][front]

        size = 1 << level
        anchor_x = snap_floor(px[:, 0] + 0.5 - size / 2.0)
        anchor_y = snap_floor(px[:, 1] + 0.5 - size / 2.0)
        for oy in range(size):
            for ox in range(size):
                gx, gy = anchor_x + ox, anchor_y + oy
                inb = (gx >= 0) & (gx < tw) & (gy >= 0) & (gy < th)
                lin = np.where(inb, gy * tw + gx, 0)
                keep = inb & invalid_flat[lin]
                if not np.any(keep):
                    continue
                cand.append((gy[keep] * tw + gx[keep],
                             d[keep].astype(np.float32),
                             np.full(keep.sum(), level, dtype=np.uint64),
                             colors[keep],
                             world[keep]))
    if not cand:
        return out

    dest = np.concatenate([c[0] for c in cand])
    d32 = np.concatenate([c[1] for c in cand])
    lev = np.concatenate([c[2] for c in cand])
    col = np.concatenate([c[3] for c in cand])
    wld = np.concatenate([c[4] for c in cand])
    seq = np.arange(dest.size, dtype=np.uint64)
    if dest.size >= _SRC_LIMIT:
        raise StateError("too many background fill candidates")
    key = ((d32.view(np.uint32).astype(np.uint64) << (_LEVEL_BITS + _SRC_BITS))
           | (lev << _SRC_BITS) | seq)
    order = np.argsort(key)[::-1]

    dl = dest[order]
    out.color.reshape(-1, 3)[dl] = col[order]
    out.depth.reshape(-1)[dl] = d32[order]
    out.dyn_warped.reshape(-1)[dl] = 0
    out.valid.reshape(-1)[dl] = 1

    # Back-pointing motion (through the pyramid camera, in the target pixel
    # frame) only for the candidates that actually won a pixel.
    winner = np.full(th * tw, -1, dtype=np.int64)
    winner[dl] = order
    filled = np.flatnonzero(winner >= 0)
    src_px, _, _ = project(wld[winner[filled]], pyr.pose, pyr.window)
    src_in_target = map_px(src_px, pyr.window, target_window)
    dest_centers = np.stack([filled % tw + 0.5, filled // tw + 0.5], axis=-1)
    out.motion_back.reshape(-1, 2)[filled] = (src_in_target - dest_centers).astype(np.float32)
    return out
