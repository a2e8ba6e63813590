"""Shading-correction inputs, focus-mask math, and the corrector interface.

The geometry-aware stages reuse the source frame's shading verbatim, so
anything that moves without geometry (shadows, reflections) lags. The
corrector hook receives the warped output, a re-warped previous frame with
ghosting suppressed, and a ternary input mask; the shipped corrector is the
identity, which leaves the pipeline's output exactly equal to the warped
and hole-filled color.
"""

from __future__ import annotations

import numpy as np

from .errors import CorrectorContractError
from .geometry import CameraPose, RenderWindow, map_px, project, unproject
from .motion import WarpOutput
from .sequence import FrameRecord

SMAPE_EPS = 1e-3
FOCUS_THRESHOLD = 0.5
DEFAULT_DEPTH_TOL = 0.02
FILL_LEVELS = 5

INPUT_DYNAMIC = 1.0
INPUT_DISOCCLUSION = 0.0
INPUT_REMAINING = 0.5


def smape(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel symmetric mean absolute percentage error over RGB.

    s = sum_c |a_c - b_c| / (sum_c (a_c + b_c) + eps) with eps = 1e-3,
    computed on linear radiance (components >= 0).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    num = np.sum(np.abs(a - b), axis=-1)
    den = np.sum(a + b, axis=-1) + SMAPE_EPS
    return num / den


def focus_mask(gae: np.ndarray, gt: np.ndarray, dyn_warped: np.ndarray,
               threshold: float = FOCUS_THRESHOLD) -> np.ndarray:
    """Binary mask of static pixels whose shading is far from ground truth.

    A pixel is flagged when the minimum SMAPE between its color and every
    ground-truth color in the 3x3 neighborhood exceeds the threshold and
    its warped dynamic flag is 0. The neighborhood minimum forgives one-
    pixel shifts; borders use the clipped neighborhood.
    """
    gt_pad = np.pad(np.asarray(gt, dtype=np.float64),
                    ((1, 1), (1, 1), (0, 0)), mode="edge")
    h, w = gae.shape[:2]
    best = np.full((h, w), np.inf)
    for dy in range(3):
        for dx in range(3):
            s = smape(gae, gt_pad[dy:dy + h, dx:dx + w])
            best = np.minimum(best, s)
    mask = (best > threshold) & (np.asarray(dyn_warped) == 0)
    return mask.astype(np.uint8)


def build_input_mask(warp: WarpOutput) -> np.ndarray:
    """Ternary corrector guidance from the pre-fill warp state.

    1.0 where the warped dynamic mask is set, 0.0 where no fragment landed
    (disocclusion), 0.5 everywhere else.
    """
    mask = np.full(warp.depth.shape, INPUT_REMAINING, dtype=np.float32)
    mask[warp.valid == 0] = INPUT_DISOCCLUSION
    mask[(warp.valid == 1) & (warp.dyn_warped == 1)] = INPUT_DYNAMIC
    return mask


def _bilinear_index(x: np.ndarray, y: np.ndarray, h: int, w: int):
    """Shared gather indices and weights for edge-clamped bilinear sampling."""
    fx = np.clip(x - 0.5, 0.0, w - 1.0)
    fy = np.clip(y - 0.5, 0.0, h - 1.0)
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return y0, x0, y1, x1, fx - x0, fy - y0


def _bilinear_at(buf: np.ndarray, idx) -> np.ndarray:
    y0, x0, y1, x1, wx, wy = idx
    if buf.dtype == np.float32:
        wx, wy = wx.astype(np.float32), wy.astype(np.float32)
    if buf.ndim == 3:
        wx, wy = wx[..., None], wy[..., None]
    top = buf[y0, x0] * (1.0 - wx) + buf[y0, x1] * wx
    bot = buf[y1, x0] * (1.0 - wx) + buf[y1, x1] * wx
    return top * (1.0 - wy) + bot * wy


def _nearest_at(buf: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = buf.shape[:2]
    ix = np.clip(np.floor(x).astype(np.int64), 0, w - 1)
    iy = np.clip(np.floor(y).astype(np.int64), 0, h - 1)
    return buf[iy, ix]


def _bilinear(buf: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample (H, W[, C]) at continuous pixel coordinates, clamped to edges."""
    return _bilinear_at(buf, _bilinear_index(x, y, *buf.shape[:2]))


def warp_prev(prev_frame: FrameRecord, cur_frame: FrameRecord, warp: WarpOutput,
              gae_color: np.ndarray, depth_tol: float = DEFAULT_DEPTH_TOL) -> np.ndarray:
    """Re-warp the frame before last into the extrapolated view.

    Motion composes through the current frame: x -> x + motion_back -> that
    frame's engine motion vector -> a sample position in the previous
    frame. A pixel is a ghost, and takes the (already filled) warped color
    instead, when it is invalid in the warp, when either hop leaves its
    frame, or when the depth buffers (nearest-sampled) disagree with the
    reprojected surface by more than ``depth_tol`` relative.
    """
    h, w = warp.depth.shape
    out = np.array(gae_color, dtype=np.float32, copy=True)
    valid = warp.valid.astype(bool)
    if not np.any(valid):
        return out

    centers = warp.window.pixel_centers()[valid]
    x_t = centers + warp.motion_back[valid].astype(np.float64)
    q_t = map_px(x_t, warp.window, cur_frame.window)
    ch, cw = cur_frame.shape
    ok = ((q_t[:, 0] >= 0.0) & (q_t[:, 0] <= cw)
          & (q_t[:, 1] >= 0.0) & (q_t[:, 1] <= ch))

    # Depth agreement at the current frame.
    idx_t = _bilinear_index(q_t[:, 0], q_t[:, 1], ch, cw)
    world = unproject(centers, warp.depth[valid].astype(np.float64),
                      warp.pose, warp.window)
    d_cur_expect = (world - cur_frame.pose.v_pos) @ cur_frame.pose.v_dir
    d_cur_sample = _nearest_at(cur_frame.depth, q_t[:, 0], q_t[:, 1])
    ok &= d_cur_expect > 0.0
    ok &= np.isfinite(d_cur_sample)
    ok &= np.abs(d_cur_sample - d_cur_expect) <= depth_tol * np.abs(d_cur_expect)

    # Second hop through the engine motion vectors of the current frame.
    x_prev = q_t + _bilinear_at(cur_frame.motion, idx_t)
    ph, pw = prev_frame.shape
    ok &= ((x_prev[:, 0] >= 0.0) & (x_prev[:, 0] <= pw)
           & (x_prev[:, 1] >= 0.0) & (x_prev[:, 1] <= ph))

    # Depth agreement at the previous frame, treating the current-frame
    # surface sample as the carried world point.
    idx_p = _bilinear_index(x_prev[:, 0], x_prev[:, 1], ph, pw)
    safe_q = np.clip(q_t, [0.0, 0.0], [cw, ch])
    d_safe = np.where(np.isfinite(d_cur_sample) & (d_cur_sample > 0.0),
                      d_cur_sample, 1.0).astype(np.float64)
    world_t = unproject(safe_q, d_safe, cur_frame.pose, cur_frame.window)
    d_prev_expect = (world_t - prev_frame.pose.v_pos) @ prev_frame.pose.v_dir
    d_prev_sample = _nearest_at(prev_frame.depth, x_prev[:, 0], x_prev[:, 1])
    ok &= d_prev_expect > 0.0
    ok &= np.isfinite(d_prev_sample)
    ok &= np.abs(d_prev_sample - d_prev_expect) <= depth_tol * np.abs(d_prev_expect)

    sampled = _bilinear_at(prev_frame.color, idx_p)
    vy, vx = np.nonzero(valid)
    out[vy[ok], vx[ok]] = sampled[ok].astype(np.float32)
    return out


def fill_invalid(color: np.ndarray, valid: np.ndarray,
                 levels: int = FILL_LEVELS) -> np.ndarray:
    """Pull-push hole fill: valid pixels pass through bit-for-bit.

    A validity-weighted average pyramid is built over ``levels`` halvings
    (32x reduction at the coarsest for the default 5), then upsampled back,
    writing only into invalid pixels. Raises ValueError when nothing is
    valid.
    """
    color = np.asarray(color)
    v = np.asarray(valid).astype(np.float64)
    if color.ndim != 3:
        raise ValueError(f"expected (H, W, C) color, got {color.shape}")
    if not np.any(v > 0.0):
        raise ValueError("fill_invalid requires at least one valid pixel")

    def pull(c, wgt):
        h, w = wgt.shape
        ph, pw = (h + 1) // 2 * 2, (w + 1) // 2 * 2
        cp = np.zeros((ph, pw, c.shape[2]))
        wp = np.zeros((ph, pw))
        cp[:h, :w] = c * wgt[:, :, None]
        wp[:h, :w] = wgt
        cs = (cp[0::2, 0::2] + cp[1::2, 0::2] + cp[0::2, 1::2] + cp[1::2, 1::2])
        ws = (wp[0::2, 0::2] + wp[1::2, 0::2] + wp[0::2, 1::2] + wp[1::2, 1::2])
        with np.errstate(invalid="ignore"):
            avg = np.where(ws[:, :, None] > 0.0, cs / np.maximum(ws, 1e-300)[:, :, None], 0.0)
        return avg, np.minimum(ws, 1.0) * (ws > 0.0)

    pyr_c = [color.astype(np.float64)]
    pyr_w = [v]
    for _ in range(levels):
        c, wgt = pull(pyr_c[-1], pyr_w[-1])
        pyr_c.append(c)
        pyr_w.append(wgt)
        if wgt.size == 1:
            break

    # Coarsest level: plug any remaining holes with the global weighted mean.
    top_c, top_w = pyr_c[-1], pyr_w[-1]
    if np.any(top_w == 0.0):
        wsum = float(np.sum(pyr_w[0]))
        mean = np.sum(pyr_c[0] * pyr_w[0][:, :, None], axis=(0, 1)) / wsum
        top_c = np.where(top_w[:, :, None] > 0.0, top_c, mean)
        pyr_c[-1] = top_c

    for lvl in range(len(pyr_c) - 2, -1, -1):
        coarse = pyr_c[lvl + 1]
        fine_c, fine_w = pyr_c[lvl], pyr_w[lvl]
        h, w = fine_w.shape
        xs = (np.arange(w) + 0.5) / 2.0
        ys = (np.arange(h) + 0.5) / 2.0
        up = _bilinear(coarse, *np.meshgrid(xs, ys))
        pyr_c[lvl] = np.where(fine_w[:, :, None] > 0.0, fine_c, up)
        pyr_w[lvl] = np.ones_like(fine_w)

    out = np.array(color, copy=True)
    hole = ~(v > 0.0)
    out[hole] = pyr_c[0][hole].astype(out.dtype)
    return out


class IdentityCorrector:
    """Pass-through corrector: refined = input, predicted focus mask = 0."""

    name = "identity"

    def __call__(self, gae, depth, warped_prev, input_mask):
        return gae, np.zeros(gae.shape[:2], dtype=np.float32)


CORRECTORS = {"identity": IdentityCorrector}


def make_corrector(name: str):
    try:
        return CORRECTORS[name]()
    except KeyError:
        raise ValueError(f"unknown corrector {name!r}; available: {sorted(CORRECTORS)}")


def apply_corrector(corrector, gae: np.ndarray, depth: np.ndarray,
                    warped_prev: np.ndarray, input_mask: np.ndarray) -> np.ndarray:
    """Blend the corrector's refinement by its predicted focus mask.

    out = gae * (1 - m) + refined * m, per pixel per channel, with the
    predicted mask clamped to [0, 1]. Shape mismatches are contract errors.
    """
    refined, mask = corrector(gae, depth, warped_prev, input_mask)
    refined = np.asarray(refined)
    mask = np.asarray(mask)
    if refined.shape != gae.shape:
        raise CorrectorContractError(
            f"corrector color {refined.shape} does not match input {gae.shape}")
    if mask.shape != gae.shape[:2]:
        raise CorrectorContractError(
            f"corrector mask {mask.shape} does not match image {gae.shape[:2]}")
    m = np.clip(mask.astype(np.float32), 0.0, 1.0)[:, :, None]
    return (gae * (1.0 - m) + refined.astype(gae.dtype) * m).astype(gae.dtype)
