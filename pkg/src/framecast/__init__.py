"""Frame extrapolation laboratory.

Generates future frames from rendered history alone: world-space motion
estimation with a per-pixel static test, depth-tested forward warping, a
hierarchical background store for disocclusion fill, adaptive asymmetric
render windows for out-of-screen coverage, and a pluggable shading
corrector. A built-in analytic ray-cast renderer provides exact ground
truth for every stage.
"""

from .background import (BackgroundPyramid, empty_pyramid, project_background,
                         update_background)
from .buffers import export_png, read_buffer, write_buffer
from .errors import (BufferFormatError, CorrectorContractError, FramecastError,
                     ManifestError, PairingError, SequencingError, StateError)
from .geometry import (CameraPose, ExtrapolationSchedule, RenderWindow,
                       make_projection, pixel_map, project, schedule_alphas, unproject)
from .metrics import MetricReport, encode_gamma, evaluate_sequence, psnr, ssim, write_report
from .motion import (HistoryState, WarpOutput, estimate_positions, forward_warp,
                     initial_history, update_history)
from .pipeline import ExtrapolatedFrame, Pipeline, PipelineConfig, run_sequence
from .presets import PRESETS, load_scene
from .scene import SceneObject, SceneScript, Trajectory, generate_sequence, render
from .sequence import FrameRecord, SequenceManifest
from .shading import (apply_corrector, build_input_mask, fill_invalid, focus_mask,
                      make_corrector, smape, warp_prev)
from .window import (WindowPlan, compute_window, crop_to_display, plan_window,
                     predict_pose, window_pixels)

__version__ = "0.1.0"
