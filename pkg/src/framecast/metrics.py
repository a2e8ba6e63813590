"""Image-quality metrics and sequence evaluation reports.

Metrics operate on display-referred values: linear radiance is gamma-2.2
encoded and clamped to [0, 1] first (:func:`encode_gamma`), since that is
what reaches the display. PSNR saturates at 99 dB for bit-exact pairs.
The sequence evaluator writes a machine-readable JSON report, a delimited
per-frame table, a text summary, and per-frame metric figures.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .errors import PairingError
from .sequence import ROLE_EXTRAPOLATED, ROLE_GROUNDTRUTH, SequenceManifest
from .shading import focus_mask, smape

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def encode_gamma(linear: np.ndarray, gamma: float = 2.2) -> np.ndarray:
    """Linear radiance -> display-referred values in [0, 1]."""
    return np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0) ** (1.0 / gamma)


def psnr(pred: np.ndarray, ref: np.ndarray, mask: np.ndarray | None = None) -> float:
    """PSNR in dB over display-referred values, optionally masked.

    10 * log10(1 / MSE); returns 99 dB when the MSE is exactly zero.
    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {ref.shape}")
    err = (pred - ref) ** 2
    if mask is not None:
        m = np.asarray(mask).astype(bool)
        if not np.any(m):
            raise ValueError("psnr mask selects no pixels")
        err = err[m]
    mse = float(np.mean(err))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (r / sigma) ** 2)
    return k / k.sum()


def _gauss_filter(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = correlate1d(img, kernel, axis=0, mode="reflect")
    return correlate1d(out, kernel, axis=1, mode="reflect")


def ssim(pred: np.ndarray, ref: np.ndarray) -> float:
    """Mean structural similarity over the luminance channel.

    11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range
    1.0; luminance is the channel mean of the display-referred inputs. The
    half-window border is excluded from the average.
    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {ref.shape}")
    if pred.ndim == 3:
        pred = pred.mean(axis=2)
        ref = ref.mean(axis=2)
    if min(pred.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {pred.shape}")

    k = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu1 = _gauss_filter(pred, k)
    mu2 = _gauss_filter(ref, k)
    s11 = _gauss_filter(pred * pred, k) - mu1 * mu1
    s22 = _gauss_filter(ref * ref, k) - mu2 * mu2
    s12 = _gauss_filter(pred * ref, k) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    ssim_map = num / den
    b = SSIM_WINDOW // 2
    return float(ssim_map[b:-b, b:-b].mean())


@dataclass
class MetricReport:
    """Per-frame and aggregate metrics with per-region breakdowns."""

    frames: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    config_echo: dict = field(default_factory=dict)
    label: str = ""

    def to_dict(self) -> dict:
        return {"label": self.label, "frames": self.frames,
                "aggregate": self.aggregate, "config_echo": self.config_echo}


_REGIONS = ("all", "dynamic", "disocclusion", "focus")


def _region_masks(pred_entry, pred_man: SequenceManifest,
                  pred_lin: np.ndarray, ref_lin: np.ndarray) -> dict[str, np.ndarray]:
    from .buffers import read_buffer

    h, w = pred_lin.shape[:2]
    masks: dict[str, np.ndarray] = {"all": np.ones((h, w), dtype=bool)}
    paths = pred_entry.paths
    dyn = None
    if "dyn_warped" in paths:
        dyn = read_buffer(pred_man.resolve(paths["dyn_warped"]))[:, :, 0]
        masks["dynamic"] = dyn > 0.5
    if "input_mask" in paths:
        im = read_buffer(pred_man.resolve(paths["input_mask"]))[:, :, 0]
        masks["disocclusion"] = im == 0.0
    if dyn is not None:
        masks["focus"] = focus_mask(pred_lin, ref_lin, (dyn > 0.5).astype(np.uint8)) > 0
    return masks


def evaluate_sequence(pred_man: SequenceManifest, ref_man: SequenceManifest,
                      label: str = "", timestamp_tol: float = 1e-6,
                      dump_masks_to=None) -> MetricReport:
    """Pair extrapolated frames with ground truth by timestamp and score them.

    Every extrapolated frame must find a ground-truth partner within
    ``timestamp_tol``; leftovers on either side are reported as a pairing
    error. Region breakdowns use the mask planes dumped by the pipeline
    when present. ``dump_masks_to`` writes the evaluation focus mask per
    frame as a PNG into that directory.
    """
    preds = pred_man.entries(ROLE_EXTRAPOLATED)
    refs = ref_man.entries(ROLE_GROUNDTRUTH)
    if not preds:
        raise PairingError("predicted manifest has no extrapolated frames")

    ref_by_t = [(r.timestamp, r) for r in refs]
    pairs = []
    unmatched = []
    for p in preds:
        hit = [r for (t, r) in ref_by_t if abs(t - p.timestamp) <= timestamp_tol]
        if not hit:
            unmatched.append(p.timestamp)
        else:
            pairs.append((p, hit[0]))
    if unmatched:
        raise PairingError(f"no ground truth at timestamps {unmatched}")

    report = MetricReport(label=label or pred_man.config_echo.get("label", ""),
                          config_echo=dict(pred_man.config_echo))
    for p, r in pairs:
        pred_lin = pred_man.load_frame(p).color.astype(np.float64)
        ref_lin = ref_man.load_frame(r).color.astype(np.float64)
        pred_enc = encode_gamma(pred_lin)
        ref_enc = encode_gamma(ref_lin)
        row = {
            "timestamp": p.timestamp,
            "psnr": psnr(pred_enc, ref_enc),
            "ssim": ssim(pred_enc, ref_enc),
            "smape": float(np.mean(smape(pred_lin, ref_lin))),
        }
        masks = _region_masks(p, pred_man, pred_lin, ref_lin)
        for name in _REGIONS[1:]:
            m = masks.get(name)
            row[f"psnr_{name}"] = (psnr(pred_enc, ref_enc, m)
                                   if m is not None and np.any(m) else None)
        if dump_masks_to is not None and "focus" in masks:
            from .buffers import export_png, gray_to_rgb
            out_dir = Path(dump_masks_to)
            out_dir.mkdir(parents=True, exist_ok=True)
            export_png(gray_to_rgb(masks["focus"].astype(np.float32)),
                       out_dir / f"focus_{p.timestamp:.6f}.png")
        report.frames.append(row)

    keys = ["psnr", "ssim", "smape"] + [f"psnr_{n}" for n in _REGIONS[1:]]
    for key in keys:
        vals = [f[key] for f in report.frames if f.get(key) is not None]
        report.aggregate[key] = float(np.mean(vals)) if vals else None
    report.aggregate["frame_count"] = len(report.frames)
    return report


def write_report(report: MetricReport, path, figures: bool = True) -> list[Path]:
    """Write report.json plus the CSV table, text summary, and figures.

    Returns the list of files written; companion files share the JSON
    path's stem.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    written = []

    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    written.append(path)

    stem = path.with_suffix("")
    csv_path = Path(f"{stem}_frames.csv")
    cols = ["timestamp", "psnr", "ssim", "smape"] + [f"psnr_{n}" for n in _REGIONS[1:]]
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in report.frames:
            writer.writerow([row.get(c, "") if row.get(c) is not None else "" for c in cols])
    written.append(csv_path)

    txt_path = Path(f"{stem}.txt")
    lines = [f"label: {report.label}" if report.label else "label: (none)",
             f"frames: {report.aggregate.get('frame_count', 0)}"]
    for key, val in report.aggregate.items():
        if key != "frame_count" and val is not None:
            lines.append(f"{key}: {val:.4f}")
    txt_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(txt_path)

    if figures and report.frames:
        written.append(_write_figures(report, Path(f"{stem}_metrics.png")))
    return written


def _write_figures(report: MetricReport, path: Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ts = [f["timestamp"] for f in report.frames]
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    axes[0].plot(ts, [f["psnr"] for f in report.frames], marker="o", ms=3)
    axes[0].set_xlabel("timestamp (s)")
    axes[0].set_ylabel("PSNR (dB)")
    axes[1].plot(ts, [f["ssim"] for f in report.frames], marker="o", ms=3, color="tab:orange")
    axes[1].set_xlabel("timestamp (s)")
    axes[1].set_ylabel("SSIM")
    title = report.label or "extrapolation quality"
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
