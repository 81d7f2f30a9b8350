import numpy as np
import pytest

from stereopane.core import centered_camera, make_gd
from stereopane.rectify import infer_intrinsics
from stereopane.synthetic import (
    build_fixture_records,
    plane_gd,
    render_stereo_pair,
    smooth_noise,
    two_plane_gd,
    wave_texture,
)


@pytest.fixture(scope="session")
def fixture_records(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixtures")
    build_fixture_records(root, seed=0)
    return root


@pytest.fixture(scope="session")
def two_plane_band():
    """Two fronto-parallel planes plus the exact disocclusion-band numbers:
    foreground strip [64, 112) at depth 1 over depth-2 background, camera
    shift chosen so the analytic band is exactly 20 px wide."""
    w, h = 160, 120
    cam = centered_camera(w, h, infer_intrinsics(h))
    gd = two_plane_gd(w, h, 1.0, 2.0, (64, 0, 48, h))
    delta = 20.0 / (cam.focal * (1.0 / 1.0 - 1.0 / 2.0))
    return {"gd": gd, "cam": cam, "delta": delta, "x0": 64, "x1": 112,
            "band": 20.0}


@pytest.fixture(scope="session")
def rendered_stereo():
    """Rendered two-plane stereo pair with analytic per-pixel disparity."""
    rng = np.random.default_rng(3)
    margin = 24
    w, h = 240 + 2 * margin, 180 + 2 * margin
    cam = centered_camera(w, h, infer_intrinsics(h))
    zf, zb = 8.0, 12.0
    baseline = 9.0 * zb / cam.focal
    scene = two_plane_gd(w, h, zf, zb, (100 + margin, 0, 60, h), rng=rng)
    pair, gt_depth, gt_valid = render_stereo_pair(scene, cam, baseline, margin)
    return {"pair": pair, "gt_disp": cam.focal * baseline / gt_depth,
            "baseline": baseline, "focal": cam.focal}


@pytest.fixture(scope="session")
def smooth_gd():
    """Hole-free image with smooth depth: every mesh triangle survives."""
    w, h = 160, 120
    ys, xs = np.mgrid[0:h, 0:w]
    depth = 8.0 + 1.5 * np.sin(xs / 25.0) * np.cos(ys / 19.0)
    gd = make_gd(wave_texture((h, w)), depth, np.ones((h, w), bool))
    return gd, centered_camera(w, h, infer_intrinsics(h))


def make_smooth_bundle():
    from stereopane.bundle import make_bundle
    from stereopane.geometry import compute_rig
    from stereopane.inpaint import corner_gds

    w, h = 160, 120
    cam = centered_camera(w, h, infer_intrinsics(h))
    ys, xs = np.mgrid[0:h, 0:w]
    depth = 8.0 + 1.5 * np.sin(xs / 25.0) * np.cos(ys / 19.0)
    gd = make_gd(wave_texture((h, w)), depth, np.ones((h, w), bool))
    rig = compute_rig(gd.depth, 24.0, 1.0, cam)
    return make_bundle(rig, [gd] + corner_gds(gd, rig), {"record_id": "smooth"})


def make_plane_bundle(w=160, h=120, depth=9.0):
    from stereopane.bundle import make_bundle
    from stereopane.geometry import compute_rig
    from stereopane.inpaint import corner_gds

    cam = centered_camera(w, h, infer_intrinsics(h))
    gd = plane_gd(w, h, depth)
    rig = compute_rig(gd.depth, 20.0, 1.0, cam)
    return make_bundle(rig, [gd] + corner_gds(gd, rig), {"record_id": "plane"})


def make_two_plane_bundle(w=160, h=120):
    from stereopane.bundle import make_bundle
    from stereopane.geometry import compute_rig
    from stereopane.inpaint import corner_gds

    rng = np.random.default_rng(9)
    cam = centered_camera(w, h, infer_intrinsics(h))
    gd = two_plane_gd(w, h, 6.0, 11.0, (int(w * 0.4), 0, int(w * 0.25), h),
                      texture=smooth_noise((h, w), rng))
    rig = compute_rig(gd.depth, 24.0, 1.0, cam)
    return make_bundle(rig, [gd] + corner_gds(gd, rig),
                       {"record_id": "two-plane"})


@pytest.fixture(scope="session")
def smooth_bundle():
    return make_smooth_bundle()


@pytest.fixture(scope="session")
def plane_bundle():
    return make_plane_bundle()


@pytest.fixture(scope="session")
def two_plane_bundle():
    return make_two_plane_bundle()
