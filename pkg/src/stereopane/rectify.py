"""Uncalibrated stereo rectification.

Estimates the fundamental matrix robustly from feature matches, then builds a
pair of rectifying homographies by the projective / similarity / shearing
decomposition of Loop and Zhang, with two practical choices layered on top:
the principal point is assumed at the (full) image center when that point is
known, and the right image is translated afterwards so no inlier match has
negative disparity. Intrinsics are inferred from an assumed 45 degree
vertical field of view.

Convention: the fundamental matrix satisfies x_r^T F x_l = 0 for homogeneous
pixel coordinates x_l / x_r in the left / right image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from .core import ImageGray, StereopaneError

SAMPSON_INLIER_PX = 1.5
MIN_INLIER_RATIO = 0.30
MAX_RANSAC_ITERS = 2000
RANSAC_CONFIDENCE = 0.999
VERTICAL_FOV_DEG = 45.0


@dataclass(frozen=True)
class FundamentalMatrix:
    """Rank-2 fundamental matrix, Frobenius-normalized."""

    m: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(self.m, np.float64)
        if m.shape != (3, 3):
            raise StereopaneError("fundamental matrix must be 3x3")
        n = np.linalg.norm(m)
        if not np.isfinite(n) or n == 0:
            raise StereopaneError("fundamental matrix is not finite")
        m = m / n
        s = np.linalg.svd(m, compute_uv=False)
        if s[2] > 1e-6:
            raise StereopaneError("fundamental matrix must have rank 2")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)


@dataclass(frozen=True)
class RectifiedPair:
    """Row-aligned stereo pair plus the transforms that produced it.

    ``matches`` holds the surviving inlier correspondences in rectified
    coordinates as rows (xl, yl, xr, yr); warped-out pixels are flagged in
    the validity masks rather than zero-filled so the disparity stage never
    matches padding.
    """

    left: ImageGray
    right: ImageGray
    left_valid: np.ndarray
    right_valid: np.ndarray
    h_left: np.ndarray
    h_right: np.ndarray
    focal: float
    baseline: float
    disparity_offset: float
    matches: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.left.shape


def infer_intrinsics(height: int) -> float:
    """Focal length in pixels for the assumed 45 degree vertical FOV."""
    if height <= 0:
        raise StereopaneError("image height must be positive")
    return (height / 2.0) / math.tan(math.radians(VERTICAL_FOV_DEG / 2.0))


def _hom(pts: np.ndarray) -> np.ndarray:
    return np.concatenate([pts, np.ones((pts.shape[0], 1))], axis=1)


def _normalize_points(pts: np.ndarray):
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1).mean()
    if d < 1e-12:
        raise StereopaneError("degenerate geometry")
    s = math.sqrt(2.0) / d
    t = np.array([[s, 0.0, -s * centroid[0]],
                  [0.0, s, -s * centroid[1]],
                  [0.0, 0.0, 1.0]])
    return (pts - centroid) * s, t


def _eight_point(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    ln, tl = _normalize_points(left)
    rn, tr = _normalize_points(right)
    xl, yl = ln[:, 0], ln[:, 1]
    xr, yr = rn[:, 0], rn[:, 1]
    a = np.stack([xr * xl, xr * yl, xr, yr * xl, yr * yl, yr, xl, yl,
                  np.ones_like(xl)], axis=1)
    _, _, vt = np.linalg.svd(a)
    f = vt[-1].reshape(3, 3)
    u, s, vt2 = np.linalg.svd(f)
    f = u @ np.diag([s[0], s[1], 0.0]) @ vt2
    f = tr.T @ f @ tl
    n = np.linalg.norm(f)
    if n == 0 or not np.isfinite(n):
        raise StereopaneError("degenerate geometry")
    return f / n


def _sampson_sq(f: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    hl = _hom(left)
    hr = _hom(right)
    fl = hl @ f.T          # rows: F x_l
    fr = hr @ f            # rows: F^T x_r
    err = np.sum(hr * fl, axis=1)
    denom = fl[:, 0] ** 2 + fl[:, 1] ** 2 + fr[:, 0] ** 2 + fr[:, 1] ** 2
    return err ** 2 / np.maximum(denom, 1e-300)


def _canonical_sign(f: np.ndarray) -> np.ndarray:
    idx = np.unravel_index(np.argmax(np.abs(f)), f.shape)
    return f if f[idx] > 0 else -f


def estimate_fundamental(matches: np.ndarray, seed: int = 0):
    """Robustly estimate F from matches given as rows (xl, yl, xr, yr).

    Random-sample consensus over the normalized 8-point solution with a
    Sampson-distance inlier threshold of 1.5 px; the final matrix is refit on
    the inlier set and rank-2 enforced. Returns (FundamentalMatrix, inlier
    boolean mask).
    """
    matches = np.asarray(matches, np.float64)
    if matches.ndim != 2 or matches.shape[1] != 4 or matches.shape[0] < 8:
        raise StereopaneError("at least 8 matches are required")
    left = matches[:, 0:2]
    right = matches[:, 2:4]
    n = matches.shape[0]
    th2 = SAMPSON_INLIER_PX ** 2
    rng = np.random.default_rng(seed)

    best_count = 0
    best_inliers = None
    needed = MAX_RANSAC_ITERS
    it = 0
    while it < needed:
        it += 1
        sample = rng.choice(n, size=8, replace=False)
        try:
            f = _eight_point(left[sample], right[sample])
        except (StereopaneError, np.linalg.LinAlgError):
            continue
        inl = _sampson_sq(f, left, right) <= th2
        count = int(inl.sum())
        if count > best_count:
            best_count = count
            best_inliers = inl
            ratio = count / n
            if ratio >= 1.0:
                break
            fail = 1.0 - ratio ** 8
            if fail < 1e-12:
                break
            needed = min(MAX_RANSAC_ITERS,
                         int(math.ceil(math.log(1.0 - RANSAC_CONFIDENCE)
                                       / math.log(fail))))

    if best_inliers is None or best_count < 8 or best_count / n < MIN_INLIER_RATIO:
        raise StereopaneError("degenerate geometry")

    # refit on inliers, then re-collect with the refined matrix
    for _ in range(2):
        f = _eight_point(left[best_inliers], right[best_inliers])
        inl = _sampson_sq(f, left, right) <= th2
        if int(inl.sum()) < 8:
            break
        best_inliers = inl
    # chance-consistent outliers inside the Sampson band can still bias the
    # least-squares fit; refit once more on the tightest three quarters
    err = _sampson_sq(f, left, right)
    core_cut = float(np.quantile(err[best_inliers], 0.75))
    core = best_inliers & (err <= max(core_cut, 1e-12))
    if int(core.sum()) >= 8:
        f = _eight_point(left[core], right[core])
        inl = _sampson_sq(f, left, right) <= th2
        if int(inl.sum()) >= 8:
            best_inliers = inl
    if best_inliers.sum() / n < MIN_INLIER_RATIO:
        raise StereopaneError("degenerate geometry")
    return FundamentalMatrix(_canonical_sign(f)), best_inliers


def _epipoles(f: np.ndarray):
    u, _, vt = np.linalg.svd(f)
    e_left = vt[-1]
    e_right = u[:, -1]
    return e_left, e_right


def _epipole_inside(e: np.ndarray, width: int, height: int) -> bool:
    if abs(e[2]) < 1e-12 * np.linalg.norm(e):
        return False
    x, y = e[0] / e[2], e[1] / e[2]
    return -0.5 <= x <= width - 0.5 and -0.5 <= y <= height - 0.5


def _distortion_terms(width: int, height: int):
    """Second moment of the pixel grid about its center, and the center."""
    n = width * height
    pp_t = n * np.diag([(width ** 2 - 1) / 12.0, (height ** 2 - 1) / 12.0, 0.0])
    center = np.array([(width - 1) / 2.0, (height - 1) / 2.0, 1.0])
    pc_t = n * np.outer(center, center)
    return pp_t, pc_t


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def _best_direction(a1, b1, a2, b2) -> np.ndarray:
    """Minimize the summed distortion ratios over directions (cos t, sin t, 0)."""

    def ratio(a, b, z):
        den = z @ b[:2, :2] @ z
        if den <= 1e-300:
            return np.inf
        return (z @ a[:2, :2] @ z) / den

    def g(theta):
        z = np.array([math.cos(theta), math.sin(theta)])
        return ratio(a1, b1, z) + ratio(a2, b2, z)

    thetas = np.linspace(0.0, math.pi, 721, endpoint=False)
    vals = [g(t) for t in thetas]
    i = int(np.argmin(vals))
    if not np.isfinite(vals[i]):
        raise StereopaneError("near-singular decomposition")
    lo = thetas[i] - math.pi / 720
    hi = thetas[i] + math.pi / 720
    from scipy.optimize import minimize_scalar
    res = minimize_scalar(g, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    best = res.x if res.fun <= vals[i] else thetas[i]
    return np.array([math.cos(best), math.sin(best), 0.0])


def _rotation_to_x(direction_x: float, direction_y: float) -> np.ndarray:
    """Rotation about the origin taking the given direction to the +-x axis,
    choosing the smaller rotation angle."""
    alpha = math.atan2(direction_y, direction_x)
    beta = -alpha
    while beta <= -math.pi / 2:
        beta += math.pi
    while beta > math.pi / 2:
        beta -= math.pi
    c, s = math.cos(beta), math.sin(beta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _shear(h_current: np.ndarray, width: int, height: int) -> np.ndarray:
    """X-shear that restores perpendicularity and aspect of the warped frame."""

    def apply(p):
        q = h_current @ np.array([p[0], p[1], 1.0])
        if abs(q[2]) < 1e-300:
            raise StereopaneError("near-singular decomposition")
        return q[:2] / q[2]

    a = apply((width / 2.0, 0.0))
    b = apply((width, height / 2.0))
    c = apply((width / 2.0, height))
    d = apply((0.0, height / 2.0))
    u = b - d
    v = c - a
    k = height * width * (u[1] * v[0] - u[0] * v[1])
    if abs(k) < 1e-12:
        raise StereopaneError("near-singular decomposition")
    sa = (height ** 2 * u[1] ** 2 + width ** 2 * v[1] ** 2) / k
    sb = -(height ** 2 * u[0] * u[1] + width ** 2 * v[0] * v[1]) / k
    if sa < 0:
        sa, sb = -sa, -sb
    return np.array([[sa, sb, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def loop_zhang_rectify(f: FundamentalMatrix, dims: tuple[int, int],
                       principal: np.ndarray | None = None):
    """Rectifying homography pair (h_left, h_right) for the given geometry.

    Each homography decomposes as shearing x similarity x projective. The
    projective parts share the direction that minimizes relative depth-of-row
    variation across both images (so projective distortion is smallest), the
    similarities send both epipoles to infinity along x and align the
    vertical coordinate, and the shears clean up aspect. Finally both images
    get a common scale and a common vertical translation, plus per-image
    horizontal translations that pin the (assumed) principal point to the
    output center.
    """
    width, height = int(dims[0]), int(dims[1])
    fm = f.m
    e_l, e_r = _epipoles(fm)
    if _epipole_inside(e_l, width, height) or _epipole_inside(e_r, width, height):
        raise StereopaneError("epipole in view")

    pp_t, pc_t = _distortion_terms(width, height)
    el_x = _skew(e_l)
    a1 = el_x.T @ pp_t @ el_x
    b1 = el_x.T @ pc_t @ el_x
    a2 = fm.T @ pp_t @ fm
    b2 = fm.T @ pc_t @ fm
    z = _best_direction(a1, b1, a2, b2)

    center = np.array([(width - 1) / 2.0, (height - 1) / 2.0, 1.0])
    w_l = np.cross(e_l, z)
    w_r = fm @ z
    sl = w_l @ center
    sr = w_r @ center
    if abs(sl) < 1e-12 * np.linalg.norm(w_l) or abs(sr) < 1e-12 * np.linalg.norm(w_r):
        raise StereopaneError("near-singular decomposition")
    w_l = w_l / sl
    w_r = w_r / sr
    hp_l = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], list(w_l)])
    hp_r = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], list(w_r)])

    me_l = hp_l @ e_l
    me_r = hp_r @ e_r
    rot_l = _rotation_to_x(me_l[0], me_l[1])
    rot_r = _rotation_to_x(me_r[0], me_r[1])

    h_l = rot_l @ hp_l
    h_r = rot_r @ hp_r
    f2 = np.linalg.inv(h_r).T @ fm @ np.linalg.inv(h_l)
    # with both epipoles at x-infinity: f2 ~ [[0,0,0],[0,~0,b],[0,c,d]] and
    # corresponding rows satisfy y_r = -(c*y_l + d)/b
    b_, c_, d_ = f2[1, 2], f2[2, 1], f2[2, 2]
    if abs(b_) < 1e-12 * np.linalg.norm(f2):
        raise StereopaneError("near-singular decomposition")
    s = -c_ / b_
    t = -d_ / b_
    if not np.isfinite(s) or abs(s) < 1e-6:
        raise StereopaneError("near-singular decomposition")
    align = np.array([[1.0, 0.0, 0.0], [0.0, 1.0 / s, -t / s], [0.0, 0.0, 1.0]])
    h_r = align @ h_r

    h_l = _shear(h_l, width, height) @ h_l
    h_r = _shear(h_r, width, height) @ h_r

    # common frame: shared scale and vertical offset, per-image horizontal
    # offset centering the mapped principal point
    pp = center if principal is None else np.array([principal[0], principal[1], 1.0])

    def apply(h, p):
        q = h @ p
        return q[:2] / q[2]

    corners = np.array([[0.0, 0.0, 1.0], [width - 1.0, 0.0, 1.0],
                        [0.0, height - 1.0, 1.0], [width - 1.0, height - 1.0, 1.0]])
    mapped = np.concatenate([[apply(h_l, c) for c in corners],
                             [apply(h_r, c) for c in corners]])
    span = mapped.max(axis=0) - mapped.min(axis=0)
    if not np.all(np.isfinite(span)) or span.min() <= 0:
        raise StereopaneError("near-singular decomposition")
    sigma = min((width - 1) / span[0], (height - 1) / span[1])
    if not np.isfinite(sigma) or sigma < 0.05:
        raise StereopaneError("near-singular decomposition")
    sigma = min(sigma, 20.0)
    q_l = apply(h_l, pp) * sigma
    q_r = apply(h_r, pp) * sigma
    ty = (height - 1) / 2.0 - (q_l[1] + q_r[1]) / 2.0
    t_l = np.array([[sigma, 0.0, (width - 1) / 2.0 - q_l[0]],
                    [0.0, sigma, ty], [0.0, 0.0, 1.0]])
    t_r = np.array([[sigma, 0.0, (width - 1) / 2.0 - q_r[0]],
                    [0.0, sigma, ty], [0.0, 0.0, 1.0]])
    return t_l @ h_l, t_r @ h_r


def warp_image(data: np.ndarray, h: np.ndarray, out_shape: tuple[int, int]):
    """Warp with bilinear sampling; returns (warped, valid) where valid marks
    pixels whose source location falls inside the input raster."""
    oh, ow = out_shape
    warped = cv2.warpPerspective(
        np.ascontiguousarray(data, np.float32), h, (ow, oh),
        flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0.0)
    hinv = np.linalg.inv(h)
    xs, ys = np.meshgrid(np.arange(ow, dtype=np.float64),
                         np.arange(oh, dtype=np.float64))
    denom = hinv[2, 0] * xs + hinv[2, 1] * ys + hinv[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (hinv[0, 0] * xs + hinv[0, 1] * ys + hinv[0, 2]) / denom
        sy = (hinv[1, 0] * xs + hinv[1, 1] * ys + hinv[1, 2]) / denom
    eps = 1e-9
    hh, ww = data.shape
    valid = (np.isfinite(sx) & np.isfinite(sy)
             & (sx >= -eps) & (sx <= ww - 1 + eps)
             & (sy >= -eps) & (sy <= hh - 1 + eps)
             & (denom > 0))
    return np.clip(warped.astype(np.float64), 0.0, 1.0), valid


def apply_and_offset(left: ImageGray, right: ImageGray, h_left: np.ndarray,
                     h_right: np.ndarray, matches: np.ndarray) -> RectifiedPair:
    """Warp both images and translate the right one so that no surviving
    inlier match has negative disparity (offset 0 when none do)."""
    if abs(np.linalg.det(h_left)) < 1e-12 or abs(np.linalg.det(h_right)) < 1e-12:
        raise StereopaneError("homographies must be invertible")
    matches = np.asarray(matches, np.float64).reshape(-1, 4)
    oh, ow = left.height, left.width

    def map_pts(h, pts):
        hp = _hom(pts) @ h.T
        return hp[:, :2] / hp[:, 2:3]

    if matches.shape[0]:
        ql = map_pts(h_left, matches[:, 0:2])
        qr = map_pts(h_right, matches[:, 2:4])
        surviving = np.abs(ql[:, 1] - qr[:, 1]) <= 1.0
        ql, qr = ql[surviving], qr[surviving]
    else:
        ql = qr = np.zeros((0, 2))

    offset = 0.0
    if ql.shape[0]:
        min_disp = float((ql[:, 0] - qr[:, 0]).min())
        if min_disp < 0:
            offset = -min_disp
    shift = np.array([[1.0, 0.0, -offset], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    h_right = shift @ h_right
    qr = qr - np.array([offset, 0.0])

    lw, lv = warp_image(left.data, h_left, (oh, ow))
    rw, rv = warp_image(right.data, h_right, (oh, ow))
    if not lv.any() or not rv.any():
        raise StereopaneError("warped valid region is empty")
    rect_matches = np.concatenate([ql, qr], axis=1)
    return RectifiedPair(
        left=ImageGray(lw), right=ImageGray(rw),
        left_valid=lv, right_valid=rv,
        h_left=h_left, h_right=h_right,
        focal=infer_intrinsics(oh), baseline=1.0,
        disparity_offset=offset, matches=rect_matches)
