"""Pipeline orchestration, module toggles, determinism, and the CLI."""

import json
import subprocess
import sys

import numpy as np
import pytest

from framecast.buffers import read_buffer
from framecast.cli import main as cli_main
from framecast.errors import SequencingError, StateError
from framecast.geometry import ExtrapolationSchedule, project, unproject
from framecast.motion import estimate_positions
from framecast.pipeline import Pipeline, PipelineConfig, run_sequence
from framecast.sequence import (ROLE_EXTRAPOLATED, ROLE_GROUNDTRUTH,
                                ROLE_RENDERED, SequenceManifest)

from conftest import TEST_H, TEST_W, dir_hash


def _load_frames(man, count):
    return [man.load_frame(e) for e in man.entries(ROLE_RENDERED)[:count]]


def test_cold_start_state(preset_manifests):
    man = preset_manifests["occluder-pan"]
    pipe = Pipeline(PipelineConfig(), TEST_W, TEST_H)
    frame = _load_frames(man, 1)[0]
    assert pipe.window_for(frame.pose).is_display
    pipe.run_rendered_step(frame)
    assert not pipe.hist.dyn.any()
    assert pipe.pyr.levels[0].valid.any()
    with pytest.raises(SequencingError):
        pipe.run_extrapolation_step(ExtrapolationSchedule(1, 1))


def test_out_of_order_frame_rejected(preset_manifests):
    man = preset_manifests["static-cam-static"]
    frames = _load_frames(man, 2)
    pipe = Pipeline(PipelineConfig(), TEST_W, TEST_H)
    pipe.run_rendered_step(frames[1])
    with pytest.raises(SequencingError):
        pipe.run_rendered_step(frames[0])


def test_no_aw_windows_stay_display(preset_manifests):
    man = preset_manifests["pan-right"]
    frames = _load_frames(man, 3)
    pipe = Pipeline(PipelineConfig(enable_aw=False), TEST_W, TEST_H)
    for fr in frames:
        assert pipe.window_for(fr.pose).is_display
        pipe.run_rendered_step(fr)
    # with AW on, the moving camera demands an enlarged window
    pipe2 = Pipeline(PipelineConfig(), TEST_W, TEST_H)
    pipe2.run_rendered_step(frames[0])
    win = pipe2.window_for(frames[1].pose)
    assert win.u1 > 1.0 and win.width_px > TEST_W


def test_identical_frames_reach_fixed_point(preset_manifests):
    man = preset_manifests["static-cam-static"]
    frames = _load_frames(man, 2)
    pipe = Pipeline(PipelineConfig(), TEST_W, TEST_H)
    pipe.run_rendered_step(frames[0])
    traj_1 = pipe.hist.traj.copy()
    lvl0_1 = pipe.pyr.levels[0].color.copy()
    frames[1].timestamp += 1e-6  # identical content, later stamp
    pipe.run_rendered_step(frames[1])
    assert not pipe.hist.dyn.any()
    assert np.allclose(pipe.hist.traj, traj_1, atol=1e-9)
    assert np.array_equal(pipe.pyr.levels[0].color, lvl0_1)


def test_schedule_counts(preset_dirs, tmp_path):
    man = SequenceManifest.load(preset_dirs["occluder-pan"])
    out_man, timings = run_sequence(man, PipelineConfig(), tmp_path / "out")
    rendered = len(man.entries(ROLE_RENDERED))
    exes = out_man.entries(ROLE_EXTRAPOLATED)
    assert len(exes) == rendered - 2
    assert timings["extrapolation_steps"] == len(exes)
    for ex in exes:
        assert ex.window.is_display


def test_depth_motion_consistency_invariant(preset_dirs, tmp_path):
    # unproject(x, depth, pose_alpha) projected under C_t must land at
    # x + motion_back within 1 px for warped (non-filled) pixels. For
    # dynamic fragments motion_back points at the true source pixel (splat
    # displacement), which a frozen-world reprojection cannot reproduce, so
    # the check covers the static warped pixels.
    man = SequenceManifest.load(preset_dirs["occluder-pan"])
    out_man, _ = run_sequence(man, PipelineConfig(dump_masks=False), tmp_path / "o")
    rend = man.entries(ROLE_RENDERED)
    ex = out_man.entries(ROLE_EXTRAPOLATED)[0]
    depth = read_buffer(out_man.resolve(ex.paths["depth"]))[:, :, 0]
    motion = read_buffer(out_man.resolve(ex.paths["motion"]))
    im = read_buffer(out_man.resolve(ex.paths["input_mask"]))[:, :, 0]
    dyn = read_buffer(out_man.resolve(ex.paths["dyn_warped"]))[:, :, 0]
    warped = (im != 0.0) & np.isfinite(depth) & (dyn == 0.0)
    centers = ex.window.pixel_centers()
    world = unproject(centers[warped], depth[warped].astype(np.float64),
                      ex.pose, ex.window)
    cur = next(r for r in rend
               if abs(r.timestamp - (ex.timestamp - 0.5 / 30.0)) < 1e-9)
    px, _, _ = project(world, cur.pose, cur.window)
    err = np.abs(px - (centers[warped] + motion[warped]))
    assert err.max() < 1.0


def test_pipeline_state_exposes_only_past(preset_manifests):
    man = preset_manifests["occluder-pan"]
    frames = _load_frames(man, 3)
    pipe = Pipeline(PipelineConfig(), TEST_W, TEST_H)
    for fr in frames:
        pipe.run_rendered_step(fr)
    ex = pipe.run_extrapolation_step(ExtrapolationSchedule(1, 1))
    held = [v.timestamp for v in vars(pipe).values()
            if hasattr(v, "timestamp")]
    assert all(t <= frames[-1].timestamp for t in held)
    assert ex.timestamp > frames[-1].timestamp


def test_no_me_freezes_fragments(preset_manifests):
    man = preset_manifests["occluder-pan"]
    frames = _load_frames(man, 3)
    pipe = Pipeline(PipelineConfig(enable_me=False), TEST_W, TEST_H)
    for fr in frames:
        pipe.run_rendered_step(fr)
    assert not pipe.hist.dyn.any()
    ex = pipe.run_extrapolation_step(ExtrapolationSchedule(1, 1))
    assert not ex.dyn_warped.any()
    # camera static here: frozen fragments reproduce the rendered frame
    assert np.array_equal(ex.color, frames[-1].color)


def test_no_scn_equals_identity_corrector(preset_dirs, tmp_path):
    man = SequenceManifest.load(preset_dirs["moving-shadow"])
    a, _ = run_sequence(man, PipelineConfig(enable_scn=True), tmp_path / "a")
    b, _ = run_sequence(man, PipelineConfig(enable_scn=False), tmp_path / "b")
    for ea, eb in zip(a.entries(ROLE_EXTRAPOLATED), b.entries(ROLE_EXTRAPOLATED)):
        ca = read_buffer(a.resolve(ea.paths["color"]))
        cb = read_buffer(b.resolve(eb.paths["color"]))
        assert np.array_equal(ca, cb)


def test_run_sequence_deterministic(preset_dirs, tmp_path):
    man = SequenceManifest.load(preset_dirs["pan-right"])
    run_sequence(man, PipelineConfig(), tmp_path / "r1")
    run_sequence(man, PipelineConfig(), tmp_path / "r2")
    h1, h2 = dir_hash(tmp_path / "r1"), dir_hash(tmp_path / "r2")
    assert h1 == h2


def test_run_sequence_needs_three_frames(preset_dirs, tmp_path):
    man = SequenceManifest.load(preset_dirs["static-cam-static"])
    man.frames = man.frames[:3]  # 2 rendered + 1 gt
    with pytest.raises(SequencingError):
        run_sequence(man, PipelineConfig(), tmp_path / "x")


def test_oracle_pose_mode_requires_pose(preset_manifests):
    man = preset_manifests["occluder-pan"]
    frames = _load_frames(man, 2)
    pipe = Pipeline(PipelineConfig(pose_mode="oracle"), TEST_W, TEST_H)
    for fr in frames:
        pipe.run_rendered_step(fr)
    with pytest.raises(StateError):
        pipe.run_extrapolation_step(ExtrapolationSchedule(1, 1), oracle_pose=None)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_cli_synth_deterministic_and_workers(tmp_path, capsys):
    args = ["synth", "--scene", "occluder-pan", "--seed", "7", "--frames", "3",
            "--fps-in", "30", "--fps-out", "60", "--width", "128", "--height", "72"]
    assert cli_main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli_main(args + ["--out", str(tmp_path / "b")]) == 0
    assert cli_main(args + ["--out", str(tmp_path / "c"), "--workers", "4"]) == 0
    ha = dir_hash(tmp_path / "a")
    assert ha == dir_hash(tmp_path / "b") == dir_hash(tmp_path / "c")


def test_cli_full_loop_and_report(tmp_path, capsys):
    seq = tmp_path / "seq"
    out = tmp_path / "out"
    report = tmp_path / "report.json"
    assert cli_main(["synth", "--scene", "occluder-pan", "--seed", "1",
                     "--frames", "5", "--width", "160", "--height", "90",
                     "--out", str(seq)]) == 0
    assert cli_main(["extrapolate", "--in", str(seq), "--out", str(out),
                     "--pose", "oracle", "--dump-masks", "--label", "demo"]) == 0
    assert cli_main(["eval", "--pred", str(out), "--ref", str(seq),
                     "--report", str(report), "--dump-masks"]) == 0
    assert list((tmp_path / "focus_masks").glob("focus_*.png"))
    data = json.loads(report.read_text())
    out_man = SequenceManifest.load(out)
    assert len(data["frames"]) == len(out_man.entries(ROLE_EXTRAPOLATED))
    assert (tmp_path / "report_metrics.png").exists()
    # export one produced buffer as PNG
    color_buf = out / out_man.entries(ROLE_EXTRAPOLATED)[0].paths["color"]
    assert cli_main(["export", "--in", str(color_buf),
                     "--png", str(tmp_path / "frame.png")]) == 0
    assert (tmp_path / "frame.png").exists()


def test_cli_exit_codes(tmp_path, capsys):
    assert cli_main(["synth", "--unknown-flag"]) == 1
    assert cli_main(["no-such-command"]) == 1
    assert cli_main([]) == 1
    assert cli_main(["extrapolate", "--in", str(tmp_path / "missing"),
                     "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.buf"
    bad.write_bytes(b"not a buffer")
    assert cli_main(["export", "--in", str(bad),
                     "--png", str(tmp_path / "x.png")]) == 2
    assert cli_main(["synth", "--scene", "no-such-preset",
                     "--out", str(tmp_path / "s")]) == 2


def test_cli_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "framecast.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "synth" in proc.stdout
