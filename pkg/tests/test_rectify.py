import math

import numpy as np
import pytest

from stereopane.core import ImageGray, StereopaneError
from stereopane.rectify import (
    FundamentalMatrix,
    apply_and_offset,
    estimate_fundamental,
    infer_intrinsics,
    loop_zhang_rectify,
    warp_image,
)
from stereopane.synthetic import rotation_xyz, smooth_noise

CANONICAL_F = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def camera_matrix(w, h):
    f = infer_intrinsics(h)
    return np.array([[f, 0.0, (w - 1) / 2.0],
                     [0.0, f, (h - 1) / 2.0],
                     [0.0, 0.0, 1.0]])


def project(k, rot, t, pts):
    cam = pts @ rot.T + t
    xy = cam[:, :2] / cam[:, 2:3]
    return xy @ k[:2, :2].T + k[:2, 2]


def analytic_f(k, rot, t):
    tx = np.array([[0, -t[2], t[1]], [t[2], 0, -t[0]], [-t[1], t[0], 0]])
    f = np.linalg.inv(k).T @ tx @ rot @ np.linalg.inv(k)
    return f / np.linalg.norm(f)


def synth_matches(rng, rot_deg=5.0, w=320, h=240, n=300):
    k = camera_matrix(w, h)
    ang = np.radians(rng.uniform(-rot_deg, rot_deg, 3)) * [0.3, 1.0, 0.3]
    rot = rotation_xyz(*ang)
    t = np.array([-1.0, rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)])
    pts = np.stack([rng.uniform(-4, 4, n), rng.uniform(-3, 3, n),
                    rng.uniform(6, 20, n)], 1)
    xl = project(k, np.eye(3), np.zeros(3), pts)
    xr = project(k, rot, t, pts)
    inb = lambda x: ((x[:, 0] >= 0) & (x[:, 0] <= w - 1)
                     & (x[:, 1] >= 0) & (x[:, 1] <= h - 1))
    ok = inb(xl) & inb(xr)
    return np.concatenate([xl[ok], xr[ok]], 1), (w, h), analytic_f(k, rot, t)


def align_sign(f, ref):
    return f if np.sum(f * ref) >= 0 else -f


def map_pts(h, pts):
    q = np.concatenate([pts, np.ones((pts.shape[0], 1))], 1) @ h.T
    return q[:, :2] / q[:, 2:3]


def test_recover_known_f_exactly():
    rng = np.random.default_rng(1)
    m, dims, f_true = synth_matches(rng)
    fm, inl = estimate_fundamental(m, seed=0)
    assert inl.all()
    diff = np.linalg.norm(align_sign(fm.m, f_true) - f_true)
    assert diff <= 1e-6


def test_pure_shift_gives_canonical_f():
    rng = np.random.default_rng(2)
    n = 200
    xl = np.stack([rng.uniform(0, 319, n), rng.uniform(0, 239, n)], 1)
    xr = xl - np.stack([rng.uniform(2, 40, n), np.zeros(n)], 1)
    fm, _ = estimate_fundamental(np.concatenate([xl, xr], 1), seed=0)
    ref = CANONICAL_F / np.linalg.norm(CANONICAL_F)
    assert np.linalg.norm(align_sign(fm.m, ref) - ref) <= 1e-9


def test_outlier_contamination():
    rng = np.random.default_rng(3)
    m, dims, f_true = synth_matches(rng)
    n = m.shape[0]
    bad = m.copy()
    junk = np.stack([rng.uniform(0, 319, n), rng.uniform(0, 239, n),
                     rng.uniform(0, 319, n), rng.uniform(0, 239, n)], 1)
    contaminated = np.concatenate([m, junk])
    fm, inl = estimate_fundamental(contaminated, seed=0)
    diff = np.linalg.norm(align_sign(fm.m, f_true) - f_true)
    assert diff <= 1e-4
    assert inl[:n].mean() > 0.99
    assert inl[n:].mean() < 0.05


def test_sampson_inlier_property():
    rng = np.random.default_rng(4)
    m, _, _ = synth_matches(rng)
    fm, inl = estimate_fundamental(m, seed=0)
    from stereopane.rectify import _sampson_sq
    d2 = _sampson_sq(fm.m, m[:, :2], m[:, 2:])
    assert np.all(d2[inl] <= 1.5 ** 2 + 1e-9)


def test_too_few_matches():
    with pytest.raises(StereopaneError):
        estimate_fundamental(np.zeros((7, 4)), seed=0)


def test_degenerate_geometry_error():
    rng = np.random.default_rng(5)
    n = 100
    junk = np.stack([rng.uniform(0, 319, n), rng.uniform(0, 239, n),
                     rng.uniform(0, 319, n), rng.uniform(0, 239, n)], 1)
    with pytest.raises(StereopaneError, match="degenerate geometry"):
        estimate_fundamental(junk, seed=0)


def test_rank2_enforced():
    with pytest.raises(StereopaneError, match="rank 2"):
        FundamentalMatrix(np.eye(3))


def test_infer_intrinsics_values():
    assert infer_intrinsics(512) == pytest.approx(256 / math.tan(math.radians(22.5)))
    assert infer_intrinsics(512) == pytest.approx(618.04, abs=0.01)
    assert infer_intrinsics(2) == pytest.approx(2.414, abs=0.001)
    with pytest.raises(StereopaneError):
        infer_intrinsics(0)


def test_canonical_f_yields_identity_pair():
    fm = FundamentalMatrix(CANONICAL_F)
    hl, hr = loop_zhang_rectify(fm, (320, 240))
    assert np.allclose(hl / hl[2, 2], np.eye(3), atol=1e-9)
    assert np.allclose(hr / hr[2, 2], np.eye(3), atol=1e-9)


def test_rectification_oracle_small_rotations():
    rng = np.random.default_rng(42)
    for _ in range(10):
        m, dims, _ = synth_matches(rng, rot_deg=10.0)
        if m.shape[0] < 60:
            continue
        fm, _ = estimate_fundamental(m, seed=0)
        hl, hr = loop_zhang_rectify(fm, dims)
        dy = np.abs(map_pts(hl, m[:, :2])[:, 1] - map_pts(hr, m[:, 2:])[:, 1])
        assert (dy <= 0.5).mean() >= 0.95


def test_already_rectified_residual():
    rng = np.random.default_rng(7)
    n = 200
    xl = np.stack([rng.uniform(0, 319, n), rng.uniform(0, 239, n)], 1)
    disp = rng.uniform(2, 40, n)
    xr = xl - np.stack([disp, np.zeros(n)], 1)
    m = np.concatenate([xl, xr], 1)
    fm, _ = estimate_fundamental(m, seed=0)
    hl, hr = loop_zhang_rectify(fm, (320, 240))
    dy = np.abs(map_pts(hl, xl)[:, 1] - map_pts(hr, xr)[:, 1])
    assert dy.max() <= 0.1


def test_idempotence_on_rectified_matches():
    rng = np.random.default_rng(8)
    m, dims, _ = synth_matches(rng, rot_deg=6.0)
    fm, inl = estimate_fundamental(m, seed=0)
    hl, hr = loop_zhang_rectify(fm, dims)
    ql = map_pts(hl, m[inl, :2])
    qr = map_pts(hr, m[inl, 2:])
    m2 = np.concatenate([ql, qr], 1)
    fm2, _ = estimate_fundamental(m2, seed=0)
    hl2, hr2 = loop_zhang_rectify(fm2, dims)
    dy = np.abs(map_pts(hl2, ql)[:, 1] - ql[:, 1])
    dy2 = np.abs(map_pts(hr2, qr)[:, 1] - qr[:, 1])
    assert np.median(np.concatenate([dy, dy2])) <= 0.1


def test_epipole_in_view_rejected():
    # second camera straight ahead of the first: epipole at the image center
    w, h = 320, 240
    k = camera_matrix(w, h)
    t = np.array([0.0, 0.0, 3.0])
    f = analytic_f(k, np.eye(3), t)
    with pytest.raises(StereopaneError, match="epipole in view"):
        loop_zhang_rectify(FundamentalMatrix(f), (w, h))


def test_apply_and_offset_hand_case():
    rng = np.random.default_rng(9)
    img = ImageGray(smooth_noise((60, 80), rng))
    matches = np.array([
        [10.0, 5.0, 13.0, 5.0],   # disparity -3
        [20.0, 9.0, 18.0, 9.0],   # disparity +2
        [30.0, 13.0, 23.0, 13.0],  # disparity +7
    ])
    pair = apply_and_offset(img, img, np.eye(3), np.eye(3), matches)
    assert pair.disparity_offset == pytest.approx(3.0, abs=1e-12)
    d = pair.matches[:, 0] - pair.matches[:, 2]
    assert np.allclose(sorted(d), [0.0, 5.0, 10.0], atol=1e-12)


def test_apply_and_offset_nonnegative_untouched():
    rng = np.random.default_rng(10)
    img = ImageGray(smooth_noise((60, 80), rng))
    matches = np.array([[20.0, 9.0, 18.0, 9.0], [30.0, 13.0, 23.0, 13.0]])
    pair = apply_and_offset(img, img, np.eye(3), np.eye(3), matches)
    assert pair.disparity_offset == 0.0
    assert np.array_equal(pair.right.data, pair.left.data)


def test_apply_and_offset_all_at_infinity():
    rng = np.random.default_rng(11)
    img = ImageGray(smooth_noise((60, 80), rng))
    matches = np.array([[20.0, 9.0, 20.0, 9.0], [30.0, 13.0, 30.0, 13.0]])
    pair = apply_and_offset(img, img, np.eye(3), np.eye(3), matches)
    assert pair.disparity_offset == 0.0


def test_rectified_pair_invariants_on_synthetic_cameras():
    rng = np.random.default_rng(12)
    img = ImageGray(smooth_noise((240, 320), rng))
    m, dims, _ = synth_matches(rng, rot_deg=5.0)
    fm, inl = estimate_fundamental(m, seed=0)
    hl, hr = loop_zhang_rectify(fm, dims)
    pair = apply_and_offset(img, img, hl, hr, m[inl])
    if pair.matches.shape[0]:
        dy = np.abs(pair.matches[:, 1] - pair.matches[:, 3])
        assert dy.max() <= 1.0
        disp = pair.matches[:, 0] - pair.matches[:, 2]
        assert disp.min() >= -1e-9


def test_warp_identity_and_mask():
    rng = np.random.default_rng(13)
    img = smooth_noise((40, 50), rng)
    out, valid = warp_image(img, np.eye(3), (40, 50))
    assert valid.all()
    assert np.allclose(out, img, atol=1e-6)
    shift = np.array([[1.0, 0.0, 10.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    out2, valid2 = warp_image(img, shift, (40, 50))
    assert not valid2[:, :10].any()
    assert valid2[:, 10:].all()
