"""Acceptance suite: one test per release criterion, each printing a PASS
line with the measured figure (run with `pytest -s tests/test_acceptance.py`
or `-rA` to see them)."""

import hashlib
import math
import os
import time

import numba
import numpy as np
import pytest

from stereopane.core import (
    CameraView,
    DepthMap,
    NormalizedInverseDepth,
    centered_camera,
    make_gd,
    normalize_inverse_depth,
)
from stereopane.bundle import load, make_bundle, save
from stereopane.cli import run
from stereopane.disparity import MatcherConfig, dense_disparity_pair
from stereopane.geometry import (
    boundary_mask,
    compute_rig,
    depth_to_mesh,
    double_reproject,
    render,
)
from stereopane.inpaint import (
    InpaintRequest,
    corner_gds,
    depth_loss,
    inpaint_gd_verbose,
    request_from_gd,
)
from stereopane.core import BoundaryMask
from stereopane.rectify import estimate_fundamental, infer_intrinsics, loop_zhang_rectify
from stereopane.synthetic import smooth_noise, two_plane_gd
from stereopane.viewsynth import benchmark

MAX_WORKERS = numba.config.NUMBA_NUM_THREADS


def _sorted_median(values):
    """Independent median oracle: sort and take the middle element(s)."""
    s = sorted(values)
    n = len(s)
    mid = n // 2
    return s[mid] if n % 2 else 0.5 * (s[mid - 1] + s[mid])


def test_rig_formula_exactness():
    rng = np.random.default_rng(100)
    worst_r = 0.0
    worst_c = 0.0
    for _ in range(100):
        b = float(rng.uniform(0.1, 10.0))
        d_max = float(rng.uniform(1.0, 200.0))
        n = int(rng.integers(3, 40)) * 2 + 1   # odd count: unambiguous median
        depths = rng.uniform(0.5, 50.0, n)
        cam = centered_camera(64, 48, 100.0)
        rig = compute_rig(DepthMap(depths.reshape(1, -1),
                                   np.ones((1, n), bool)), d_max, b, cam)
        expect_r = (96.0 * b / d_max) * (math.sqrt(2.0) / 2.0)
        expect_c = -1.0 / _sorted_median(1.0 / depths)
        worst_r = max(worst_r, abs(rig.r_w - expect_r))
        worst_c = max(worst_c, abs(rig.center[2] - expect_c))
    assert worst_r <= 1e-12
    assert worst_c <= 1e-12
    print(f"PASS rig formula exactness: max |dr|={worst_r:.2e} "
          f"max |dc|={worst_c:.2e} over 100 draws")


def test_rectification_oracle():
    from test_rectify import map_pts, synth_matches

    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    fractions = []
    done = 0
    while done < 50:
        m, dims, _ = synth_matches(rng, rot_deg=10.0)
        if m.shape[0] < 60:
            continue
        done += 1
        fm, _ = estimate_fundamental(m, seed=0)
        hl, hr = loop_zhang_rectify(fm, dims)
        dy = np.abs(map_pts(hl, m[:, :2])[:, 1] - map_pts(hr, m[:, 2:])[:, 1])
        frac = float((dy <= 0.5).mean())
        fractions.append(frac)
        assert frac >= 0.95
    # already-rectified input
    n = 200
    xl = np.stack([rng.uniform(0, 319, n), rng.uniform(0, 239, n)], 1)
    xr = xl - np.stack([rng.uniform(2, 40, n), np.zeros(n)], 1)
    m = np.concatenate([xl, xr], 1)
    fm, _ = estimate_fundamental(m, seed=0)
    hl, hr = loop_zhang_rectify(fm, (320, 240))
    resid = np.abs(map_pts(hl, xl)[:, 1] - map_pts(hr, xr)[:, 1]).max()
    assert resid <= 0.1
    elapsed = time.perf_counter() - t0
    assert elapsed <= 60.0
    print(f"PASS rectification oracle: 50 pairs, min frac within 0.5px = "
          f"{min(fractions):.3f}, rectified-input residual {resid:.2e} px, "
          f"{elapsed:.1f}s")


def test_disparity_oracle(rendered_stereo):
    dl, dr = dense_disparity_pair(rendered_stereo["pair"],
                                  MatcherConfig(max_disp=24))
    err = np.abs(dl.data - rendered_stereo["gt_disp"])
    frac = float((err <= 1.0).mean())
    assert frac >= 0.90
    h, w = dl.shape
    xs = np.arange(w)[None, :].repeat(h, 0)
    tgt = np.round(xs - dl.data).astype(int)
    inb = (tgt >= 0) & (tgt < w)
    dr_at = np.take_along_axis(dr.data, np.clip(tgt, 0, w - 1), 1)
    bad = int((dl.valid & (~inb | (np.abs(dl.data - dr_at) > 1.0))).sum())
    assert bad == 0
    print(f"PASS disparity oracle: {frac:.3f} of pixels within 1px, "
          f"{bad} consistency violations on valid pixels")


def test_double_reprojection_oracle(two_plane_band):
    fx = two_plane_band
    cam = fx["cam"]
    ys, xs = np.mgrid[0:cam.height, 0:cam.width]

    def target(dx):
        return CameraView(np.array([dx, 0.0, 0.0]), np.eye(3), cam.focal,
                          cam.principal, cam.width, cam.height)

    m = double_reproject(fx["gd"], cam, target(fx["delta"]))
    width_err = abs(float(m.sum(axis=1).mean()) - fx["band"])
    analytic = (xs >= np.ceil(fx["x0"] - fx["band"])) & (xs < fx["x0"])
    iou = float((m & analytic).sum() / (m | analytic).sum())
    assert width_err <= 1.0
    assert iou >= 0.9
    assert double_reproject(fx["gd"], cam, cam).sum() == 0
    from stereopane.synthetic import plane_gd
    plane = plane_gd(cam.width, cam.height, 2.0)
    assert double_reproject(plane, cam, target(fx["delta"])).sum() == 0
    print(f"PASS double reprojection oracle: band width err {width_err:.2f}px,"
          f" IoU {iou:.3f}, empty masks for same-view and single plane")


def test_identity_reprojection():
    from scipy import ndimage
    rng = np.random.default_rng(7)
    worst_i = 0.0
    worst_d = 0.0
    for _ in range(20):
        h = int(rng.integers(40, 100))
        w = int(rng.integers(40, 110))
        base = ndimage.gaussian_filter(rng.random((h, w)), 3.0)
        lo, hi = base.min(), base.max()
        depth = 4.0 + 2.0 * (base - lo) / max(hi - lo, 1e-9)  # smooth field
        gd = make_gd(rng.random((h, w)), depth, np.ones((h, w), bool))
        cam = centered_camera(w, h, infer_intrinsics(h))
        out = render(depth_to_mesh(gd, cam), cam)
        assert out.valid.all()
        worst_i = max(worst_i, float(np.abs(out.intensity.data
                                            - gd.intensity.data).max()))
        rel = np.abs(out.depth.data - depth) / depth
        worst_d = max(worst_d, float(rel.max()))
    assert worst_i <= 1e-4
    assert worst_d <= 1e-4
    print(f"PASS identity reprojection: 20 maps, max |dI|={worst_i:.2e}, "
          f"max rel dD={worst_d:.2e}")


def test_inpainting():
    h, w = 40, 60
    intensity = np.full((h, w), 0.2)
    intensity[:, 30:] = 0.9
    depth = np.full((h, w), 2.0)
    depth[:, 30:] = 1.0
    valid = np.ones((h, w), bool)
    valid[:, 22:30] = False
    gd = make_gd(np.where(valid, intensity, 0.0),
                 np.where(valid, depth, 1.0), valid)
    bm = boundary_mask(gd, ~valid)
    req = request_from_gd(gd, bm)
    out, _ = inpaint_gd_verbose(req)
    assert out.hole_count() == 0
    assert np.array_equal(out.intensity.data[valid],
                          req.intensity.data[valid])
    nid_out = normalize_inverse_depth(out.depth)
    assert np.array_equal(nid_out.data[valid], req.nid.data[valid])
    truth = normalize_inverse_depth(
        make_gd(intensity, depth, np.ones((h, w), bool)).depth)
    bg = truth.data[0, 0]
    fill_err = float(np.abs(nid_out.data[~valid] - bg).max())
    assert fill_err <= 1e-3
    req_un = InpaintRequest(req.intensity, req.nid,
                            BoundaryMask(np.zeros((h, w), bool)), req.mask)
    unguided, _ = inpaint_gd_verbose(req_un)
    g_err = np.abs(normalize_inverse_depth(out.depth).data - bg)[~valid].mean()
    u_err = np.abs(normalize_inverse_depth(unguided.depth).data
                   - bg)[~valid].mean()
    assert g_err < u_err
    print(f"PASS inpainting: valid pixels bit-exact, fill err {fill_err:.1e},"
          f" guided {g_err:.2e} < unguided {u_err:.2e}")


def test_loss_metrics():
    ones = np.ones((1, 1), bool)

    def nid(data, valid=None):
        data = np.asarray(data, np.float64)
        v = np.ones(data.shape, bool) if valid is None else valid
        return NormalizedInverseDepth(data, v, 0.1, 0.9)

    m0 = depth_loss(nid([[0.3, 0.7]]), nid([[0.3, 0.7]]),
                    np.zeros((1, 2), bool))
    assert abs(m0.total) <= 1e-12
    m1 = depth_loss(nid([[0.5]]), nid([[1.0]]), np.array([[False]]))
    assert abs(m1.total - 3.0) <= 1e-12
    m2 = depth_loss(nid([[0.2, 0.2]]), nid([[0.2, 0.6]]),
                    np.array([[True, False]]))
    assert abs(m2.total - 2.42) <= 1e-12
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(200):
        h, w = int(rng.integers(1, 10)), int(rng.integers(1, 10))
        m = depth_loss(nid(rng.random((h, w))), nid(rng.random((h, w))),
                       rng.random((h, w)) > 0.5)
        worst = max(worst, abs(m.total - (m.l_valid + 6.0 * m.l_hole
                                          + 0.1 * m.tv_term)))
    assert worst <= 1e-12
    print(f"PASS loss metrics: hand values 0 / 3.0 / 2.42 exact, linear "
          f"combination residual {worst:.1e}")


def test_bundle_roundtrip(two_plane_bundle, tmp_path):
    save(two_plane_bundle, tmp_path / "b")
    back = load(tmp_path / "b")
    worst_i = 0.0
    worst_n = 0.0
    for a, b in zip(two_plane_bundle.gds, back.gds):
        worst_i = max(worst_i, float(np.abs(a.intensity.data
                                            - b.intensity.data).max()))
        na = normalize_inverse_depth(a.depth)
        nb = normalize_inverse_depth(b.depth)
        worst_n = max(worst_n, float(np.abs(na.data - nb.data).max()))
    assert worst_i <= 1.0 / 255
    assert worst_n <= 1.0 / 65535
    raw = bytearray((tmp_path / "b" / "gd3_intensity.png").read_bytes())
    raw[-15] ^= 0x01
    (tmp_path / "b" / "gd3_intensity.png").write_bytes(bytes(raw))
    with pytest.raises(Exception, match="corrupt bundle"):
        load(tmp_path / "b")
    print(f"PASS bundle round-trip: |dI| {worst_i:.2e} <= 1/255, "
          f"|dNID| {worst_n:.2e} <= 1/65535, tamper detected")


@pytest.fixture(scope="module")
def bench_bundle():
    rng = np.random.default_rng(9)
    w = h = 512
    cam = centered_camera(w, h, infer_intrinsics(h))
    gd = two_plane_gd(w, h, 6.0, 11.0, (int(w * 0.4), 0, int(w * 0.25), h),
                      texture=smooth_noise((h, w), rng))
    rig = compute_rig(gd.depth, 24.0, 1.0, cam)
    return make_bundle(rig, [gd] + corner_gds(gd, rig), {"record_id": "bench"})


def test_renderer_performance_single_thread(bench_bundle):
    rep = benchmark(bench_bundle, 120, workers=1)
    assert rep.p99_ms <= 100.0, f"p99 {rep.p99_ms:.1f} ms > 100 ms"
    print(f"PASS renderer performance (single thread): p99 "
          f"{rep.p99_ms:.1f} ms <= 100 ms over 120 frames "
          f"(mean {rep.mean_ms:.1f} ms)")


@pytest.mark.skipif(
    MAX_WORKERS < 8,
    reason=f"criterion states 8 tile workers on a 2020-class desktop CPU; "
           f"this machine exposes {MAX_WORKERS} worker thread(s)")
def test_renderer_performance_8_workers(bench_bundle):
    rep = benchmark(bench_bundle, 120, workers=8)
    assert rep.p99_ms <= 30.0, f"p99 {rep.p99_ms:.1f} ms > 30 ms"
    print(f"PASS renderer performance (8 workers): p99 {rep.p99_ms:.1f} ms "
          f"<= 30 ms over 120 frames")


def test_end_to_end_determinism(fixture_records, tmp_path):
    def digest_tree(root):
        out = {}
        for p in sorted(root.rglob("*")):
            if p.is_file():
                out[p.relative_to(root).as_posix()] = hashlib.sha256(
                    p.read_bytes()).hexdigest()
        return out

    w1 = tmp_path / "run1"
    w2 = tmp_path / "run2"
    assert run(["all", str(fixture_records), "--out", str(w1)]) == 0
    assert run(["all", str(fixture_records), "--out", str(w2)]) == 0
    d1 = digest_tree(w1)
    d2 = digest_tree(w2)
    assert d1 == d2
    assert any(k.endswith("manifest.json") for k in d1)
    print(f"PASS end-to-end determinism: {len(d1)} files byte-identical "
          f"across two runs")
