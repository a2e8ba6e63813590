"""Shipped test scenes, one per extrapolation challenge class.

* ``static-cam-static``: nothing moves; the pipeline must be a bit-exact
  pass-through.
* ``pan-right``: the camera translates right at constant speed, so content
  keeps entering at the right edge (out-of-screen disocclusion). Per-row
  depths are constant for the level camera, which keeps the forward splat
  gap-free away from silhouettes.
* ``strafe-reveal``: a static near slab occludes a far checkered wall; the
  strafing camera progressively reveals wall behind it (static
  disocclusion, exercises the deeper pyramid level).
* ``occluder-pan``: a box hops right across a checkered floor under a
  static camera (dynamic disocclusion). The per-frame hop exceeds the box's
  image width so the misclassified first sighting never overlaps later
  footprints, and the light rides the camera so no cast shadow complicates
  the vacated band.
* ``moving-shadow``: static geometry, fast-moving light; shading moves with
  zero geometric motion, which only the shading-correction path can see.

Every preset keeps the whole view covered by geometry (floor plus
backdrop), so warp validity masks are meaningful end to end.
"""

from __future__ import annotations

import math

from .scene import CameraRig, LightRig, SceneObject, SceneScript, Trajectory

FLOOR_A = (0.82, 0.78, 0.70)
FLOOR_B = (0.35, 0.33, 0.40)
WALL_A = (0.55, 0.60, 0.68)
WALL_B = (0.42, 0.46, 0.55)


def _floor() -> SceneObject:
    return SceneObject(shape="plane", point=(0.0, 0.0, 0.0), normal=(0.0, 1.0, 0.0),
                       albedo=FLOOR_A, albedo2=FLOOR_B, checker_size=1.0)


def _backdrop(z: float = -12.0) -> SceneObject:
    return SceneObject(shape="plane", point=(0.0, 0.0, z), normal=(0.0, 0.0, 1.0),
                       albedo=WALL_A, albedo2=WALL_B, checker_size=1.0)


def _camera(kind: str = "static", vel=(0.0, 0.0, 0.0)) -> CameraRig:
    return CameraRig(pos=(0.0, 1.2, 2.0), direction=(0.0, 0.0, -1.0), up=(0.0, 1.0, 0.0),
                     vfov_deg=60.0, near=0.1, kind=kind, vel=vel)


def static_cam_static(seed: int = 0) -> SceneScript:
    objs = [
        _floor(), _backdrop(),
        SceneObject(shape="sphere", center=(-1.6, 0.7, -4.5), radius=0.7,
                    albedo=(0.75, 0.30, 0.25)),
        SceneObject(shape="box", box_min=(0.9, 0.0, -5.5), box_max=(2.1, 1.3, -4.7),
                    albedo=(0.30, 0.45, 0.75)),
    ]
    return SceneScript(name="static-cam-static", seed=seed,
                       camera=_camera(), light=LightRig(pos=(3.0, 6.0, 2.0)),
                       objects=objs)


def pan_right(seed: int = 0) -> SceneScript:
    # Floor and backdrop only: their junction is depth-continuous, so the
    # strafing camera creates out-of-screen disocclusion at the right edge
    # and nothing else. Object silhouettes would add in-screen reveal
    # slivers that no history can fill.
    objs = [_floor(), _backdrop()]
    return SceneScript(name="pan-right", seed=seed,
                       camera=_camera(kind="linear", vel=(5.0, 0.0, 0.0)),
                       light=LightRig(pos=(3.0, 6.0, 2.0)), objects=objs)


def strafe_reveal(seed: int = 0) -> SceneScript:
    objs = [
        _floor(), _backdrop(),
        SceneObject(shape="box", box_min=(0.35, 0.15, -3.4), box_max=(0.65, 1.35, -2.9),
                    albedo=(0.72, 0.55, 0.20)),
    ]
    return SceneScript(name="strafe-reveal", seed=seed,
                       camera=_camera(kind="linear", vel=(2.0, 0.0, 0.0)),
                       light=LightRig(pos=(2.0, 7.0, 3.0)), objects=objs)


def occluder_pan(seed: int = 0) -> SceneScript:
    # Thin panel: no visible side or top faces, so its image is a clean
    # fronto-parallel rectangle. The hop exceeds the panel's image width,
    # so consecutive footprints never overlap and the unavoidable
    # first-sighting static misclassification leaves no stale fragments
    # under later footprints. The speed puts the hop at exactly 32 px per
    # frame at 640x360 (16 at 320x180): the trajectory resample then lands
    # on pixel centers and the estimated motion is exact.
    vel_x = 32.0 * (5.7 * (16.0 / 9.0) * math.tan(math.pi / 6.0)) / 320.0 * 30.0
    objs = [
        _floor(), _backdrop(),
        SceneObject(shape="box", box_min=(-4.8, 0.0, -3.72), box_max=(-4.36, 1.1, -3.7),
                    albedo=(0.25, 0.60, 0.30),
                    trajectory=Trajectory(kind="linear", vel=(vel_x, 0.0, 0.0))),
    ]
    return SceneScript(name="occluder-pan", seed=seed,
                       camera=_camera(), light=LightRig(pos="camera"),
                       objects=objs)


def moving_shadow(seed: int = 0) -> SceneScript:
    # The light passes behind the box (z = -8) so the cast shadow falls on
    # the floor in front of it and stays visible through the whole sweep.
    # The box tops out above the camera, giving a long shadow and hiding
    # its top face.
    objs = [
        _floor(), _backdrop(),
        SceneObject(shape="box", box_min=(-0.5, 0.0, -4.6), box_max=(0.7, 1.8, -3.9),
                    albedo=(0.30, 0.45, 0.75)),
    ]
    return SceneScript(name="moving-shadow", seed=seed,
                       camera=_camera(),
                       light=LightRig(pos=(-8.0, 6.0, -8.0), kind="linear",
                                      vel=(48.0, 0.0, 0.0)),
                       objects=objs)


PRESETS = {
    "static-cam-static": static_cam_static,
    "pan-right": pan_right,
    "strafe-reveal": strafe_reveal,
    "occluder-pan": occluder_pan,
    "moving-shadow": moving_shadow,
}


def load_scene(spec: str, seed: int = 0) -> SceneScript:
    """Resolve a preset name or a scene-script file path."""
    if spec in PRESETS:
        return PRESETS[spec](seed)
    from pathlib import Path
    path = Path(spec)
    if path.exists():
        scene = SceneScript.load(path)
        scene.seed = seed if seed else scene.seed
        return scene
    raise ValueError(f"unknown scene {spec!r}; presets: {sorted(PRESETS)}")
