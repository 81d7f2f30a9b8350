#!/usr/bin/env python3
"""Generate viewer test fixtures from the pipeline: a small scene bundle,
an offline render of it at a scripted eye, and tiny PNGs with known values
for the decoder tests. Deterministic; safe to re-run."""

import json
from pathlib import Path

import numpy as np

from stereopane.bundle import make_bundle, save, save_png8, save_png16
from stereopane.core import centered_camera
from stereopane.geometry import compute_rig
from stereopane.inpaint import corner_gds
from stereopane.rectify import infer_intrinsics
from stereopane.synthetic import smooth_noise, two_plane_gd
from stereopane.viewsynth import SceneRenderer

ROOT = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def png_fixtures():
    out = ROOT / "png"
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(12)
    g8 = rng.integers(0, 256, (5, 7)).astype(np.uint8)
    save_png8(out / "gray8.png", g8 / 255.0)
    (out / "gray8.json").write_text(json.dumps(
        {"width": 7, "height": 5, "values": g8.flatten().tolist()}))
    g16 = rng.integers(0, 65536, (4, 6)).astype(np.uint16)
    g16[0, 0] = 0
    g16[-1, -1] = 65535
    save_png16(out / "gray16.png", g16 / 65535.0)
    (out / "gray16.json").write_text(json.dumps(
        {"width": 6, "height": 4, "values": g16.flatten().tolist()}))


def bundle_fixture():
    rng = np.random.default_rng(21)
    w, h = 96, 72
    cam = centered_camera(w, h, infer_intrinsics(h))
    gd = two_plane_gd(w, h, 6.0, 11.0, (38, 0, 24, h),
                      texture=smooth_noise((h, w), rng))
    rig = compute_rig(gd.depth, 16.0, 1.0, cam)
    sb = make_bundle(rig, [gd] + corner_gds(gd, rig),
                     {"record_id": "viewer-fixture"})
    save(sb, ROOT / "bundle")

    renderer = SceneRenderer(sb)
    eye = [rig.r_w / 8.0, -rig.r_h / 8.0, -rig.r_w / 2.0]
    img = renderer.synthesize(eye)
    save_png8(ROOT / "expected_render.png", img.data)
    (ROOT / "render_meta.json").write_text(json.dumps({
        "eye": eye,
        "width": w,
        "height": h,
        "mean_tolerance": 2.0 / 255.0,
    }, indent=1))


if __name__ == "__main__":
    png_fixtures()
    bundle_fixture()
    print(f"fixtures written under {ROOT}")
