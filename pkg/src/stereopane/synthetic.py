"""Synthetic scene builders for tests, demos and pipeline fixtures.

Everything here is deterministic given the seed. Textures are smoothed noise
(feature-matchable) or low-frequency waves (resampling-friendly); scenes are
fronto-parallel planes so their projections have closed forms to test against.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .core import CameraView, GrayDepthImage, centered_camera, make_gd
from .geometry import depth_to_mesh, render
from .rectify import RectifiedPair, infer_intrinsics


def smooth_noise(shape: tuple[int, int], rng: np.random.Generator,
                 sigma: float = 1.5) -> np.ndarray:
    """Band-limited noise in [0.05, 0.95]; plenty of corners for matching."""
    img = ndimage.gaussian_filter(rng.random(shape), sigma)
    lo, hi = img.min(), img.max()
    if hi - lo < 1e-12:
        return np.full(shape, 0.5)
    return 0.05 + 0.9 * (img - lo) / (hi - lo)


def wave_texture(shape: tuple[int, int], period: float = 48.0,
                 amplitude: float = 0.3) -> np.ndarray:
    """Smooth low-curvature texture: bilinear resampling error stays tiny."""
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    v = (np.sin(2 * np.pi * xs / period) * np.cos(2 * np.pi * ys / (period * 1.3))
         + 0.4 * np.sin(2 * np.pi * (xs + ys) / (period * 2.1)))
    return 0.5 + amplitude * v / 1.4


def plane_gd(width: int, height: int, depth: float,
             texture: np.ndarray | None = None,
             rng: np.random.Generator | None = None) -> GrayDepthImage:
    """Single fronto-parallel plane at the given depth."""
    if texture is None:
        texture = (wave_texture((height, width)) if rng is None
                   else smooth_noise((height, width), rng))
    return make_gd(texture, np.full((height, width), float(depth)),
                   np.ones((height, width), bool))


def two_plane_gd(width: int, height: int, z_near: float, z_far: float,
                 fg_rect: tuple[int, int, int, int],
                 texture: np.ndarray | None = None,
                 rng: np.random.Generator | None = None) -> GrayDepthImage:
    """Foreground rectangle (x, y, w, h) at z_near over a z_far background."""
    if texture is None:
        texture = (wave_texture((height, width)) if rng is None
                   else smooth_noise((height, width), rng))
    depth = np.full((height, width), float(z_far))
    x, y, w, h = fg_rect
    depth[y:y + h, x:x + w] = float(z_near)
    return make_gd(texture, depth, np.ones((height, width), bool))


def default_camera(width: int, height: int) -> CameraView:
    return centered_camera(width, height, infer_intrinsics(height))


def rotation_xyz(rx: float, ry: float, rz: float) -> np.ndarray:
    """Rotation from Euler angles in radians (x, then y, then z)."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


def build_fixture_records(root, seed: int = 0, include_nonstereo: bool = True):
    """Write a small ingest fixture tree: two genuine stereo records rendered
    from a two-plane scene with a slightly rotated right camera, plus one
    non-stereo record (independent noise) that the culling stage must drop.
    """
    import json
    from pathlib import Path

    from PIL import Image

    root = Path(root)
    rng = np.random.default_rng(seed)

    def save8(path, data):
        arr = np.clip(np.round(data * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(path)

    def write_record(rec_id, left, right, meta):
        d = root / rec_id
        d.mkdir(parents=True, exist_ok=True)
        save8(d / "left.png", left)
        save8(d / "right.png", right)
        (d / "meta.json").write_text(json.dumps(meta, sort_keys=True),
                                     encoding="utf-8")

    margin = 28
    w, h = 200 + 2 * margin, 150 + 2 * margin
    for i, (rot_deg, zf, zb) in enumerate([(2.0, 8.0, 13.0), (-1.5, 7.0, 11.0)]):
        cam = default_camera(w, h)
        baseline = 8.0 * zb / cam.focal
        fg = (margin + 60 + 15 * i, 0, 55, h)
        scene = two_plane_gd(w, h, zf, zb, fg, rng=rng)
        mesh = depth_to_mesh(scene, cam)
        pp = np.array([cam.principal[0] - margin, cam.principal[1] - margin])
        vw, vh = w - 2 * margin, h - 2 * margin
        left_cam = CameraView(np.zeros(3), np.eye(3), cam.focal, pp, vw, vh)
        rot = rotation_xyz(0.0, np.radians(rot_deg), np.radians(rot_deg * 0.2))
        right_cam = CameraView(np.array([baseline, 0.0, 0.0]), rot,
                               cam.focal, pp, vw, vh)
        left = render(mesh, left_cam)
        right = render(mesh, right_cam)
        lv = left.intensity.data.copy()
        rv = np.where(right.valid, right.intensity.data, 0.0)
        write_record(f"{i + 1:04d}", lv, rv, {
            "title": f"synthetic scene {i + 1}",
            "date": "1910",
            "source_url": f"fixture://{i + 1:04d}",
            "crop_left": None,
            "crop_right": None,
        })
    if include_nonstereo:
        write_record("0003",
                     smooth_noise((150, 200), rng),
                     smooth_noise((150, 200), rng),
                     {"title": "back of card", "date": "",
                      "source_url": "fixture://0003",
                      "crop_left": None, "crop_right": None})
    return root


def render_stereo_pair(scene: GrayDepthImage, scene_cam: CameraView,
                       baseline: float, margin: int):
    """Render a scene from two laterally displaced cameras.

    The scene raster should extend ``margin`` pixels beyond the returned
    viewport on each side so neither render loses coverage at the frame
    border. Returns (RectifiedPair, left ground-truth depth at the viewport).
    """
    mesh = depth_to_mesh(scene, scene_cam)
    w = scene_cam.width - 2 * margin
    h = scene_cam.height - 2 * margin
    pp = np.array([scene_cam.principal[0] - margin,
                   scene_cam.principal[1] - margin])
    left_cam = CameraView(scene_cam.position, scene_cam.rotation,
                          scene_cam.focal, pp, w, h)
    right_cam = CameraView(scene_cam.position + np.array([baseline, 0.0, 0.0]),
                           scene_cam.rotation, scene_cam.focal, pp, w, h)
    left = render(mesh, left_cam)
    right = render(mesh, right_cam)
    pair = RectifiedPair(
        left=left.intensity, right=right.intensity,
        left_valid=left.valid.copy(), right_valid=right.valid.copy(),
        h_left=np.eye(3), h_right=np.eye(3),
        focal=scene_cam.focal, baseline=baseline,
        disparity_offset=0.0, matches=np.zeros((0, 4)))
    return pair, left.depth.data.copy(), left.valid.copy()
