"""Dense horizontal correspondence between rectified images.

A classical coarse-to-fine matcher stands in for learned optical flow: 3-level
pyramid, normalized cross-correlation over 9x9 patches, a search window that
is wide horizontally and a couple of pixels tall (tolerating residual
rectification drift), parabolic sub-pixel refinement, and a left-right
consistency check. Only the horizontal component is ever kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage

from .core import DepthMap, StereopaneError
from .rectify import RectifiedPair

ZERO_DISPARITY_EPS = 0.25  # px; smaller disparities clamp to a far depth


@dataclass(frozen=True)
class MatcherConfig:
    max_disp: int | None = None     # default: quarter of the image width
    vertical_slack: int = 2         # +- rows tolerated at full resolution
    patch: int = 9
    levels: int = 3
    consistency_px: float = 1.0
    min_variance: float = 1e-6


@dataclass(frozen=True)
class DisparityMap:
    """Horizontal left-to-right displacement in pixels (>= 0).

    ``data`` is densely filled (invalid pixels carry background-extended
    estimates) but only ``valid`` pixels passed the left-right consistency
    check. ``d_max`` is the maximum over valid pixels.
    """

    data: np.ndarray
    valid: np.ndarray
    d_max: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, np.float64)
        valid = np.ascontiguousarray(self.valid, bool)
        if data.shape != valid.shape or data.ndim != 2:
            raise StereopaneError("disparity raster/mask shapes are wrong")
        v = data[valid]
        if v.size and (v.min() < 0 or v.max() > data.shape[1]):
            raise StereopaneError("valid disparities must lie in [0, width]")
        d_max = float(v.max()) if v.size else 0.0
        if self.d_max is not None and abs(self.d_max - d_max) > 1e-9:
            raise StereopaneError("d_max does not match the valid data")
        data.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "d_max", d_max)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def _box(img: np.ndarray, patch: int) -> np.ndarray:
    return cv2.boxFilter(img, -1, (patch, patch), normalize=True,
                         borderType=cv2.BORDER_REPLICATE)


def _shift_rows(arr: np.ndarray, dy: int, fill=0.0) -> np.ndarray:
    """out[y] = arr[y + dy], filling rows shifted in from outside."""
    out = np.full_like(arr, fill)
    h = arr.shape[0]
    if dy >= 0:
        out[: h - dy] = arr[dy:]
    else:
        out[-dy:] = arr[: h + dy]
    return out


def _search_level(ref, other, ref_valid, other_valid, base, dx_lo, dx_hi,
                  dys, cfg: MatcherConfig, d_cap: int):
    """NCC search around per-pixel base disparities.

    Scores every horizontal candidate base+dx (dx in [dx_lo, dx_hi]) against
    the best vertical offset, then refines the winner with a parabola fit.
    Returns (disparity, matched) where matched marks pixels with a usable
    correlation peak.
    """
    h, w = ref.shape
    ref32 = ref.astype(np.float32)
    mean_r = _box(ref32, cfg.patch)
    var_r = _box(ref32 * ref32, cfg.patch) - mean_r ** 2
    textured = var_r > cfg.min_variance

    xs = np.arange(w, dtype=np.int64)[None, :].repeat(h, 0)
    n_dx = dx_hi - dx_lo + 1
    n_dy = len(dys)
    scores = np.full((n_dx, n_dy, h, w), -np.inf, np.float32)

    shifted = []
    for dy in dys:
        o = _shift_rows(other.astype(np.float32), dy)
        ov = _shift_rows(other_valid.astype(np.float32), dy)
        shifted.append((o, ov))

    for i, dx in enumerate(range(dx_lo, dx_hi + 1)):
        d = base + dx
        src_x = xs - d
        legal = (d >= 0) & (d <= d_cap) & (src_x >= 0) & (src_x < w)
        src_c = np.clip(src_x, 0, w - 1)
        for j, (o, ov) in enumerate(shifted):
            og = np.take_along_axis(o, src_c, axis=1)
            ovg = np.take_along_axis(ov, src_c, axis=1)
            mean_o = _box(og, cfg.patch)
            var_o = _box(og * og, cfg.patch) - mean_o ** 2
            cross = _box(ref32 * og, cfg.patch) - mean_r * mean_o
            denom = np.sqrt(np.maximum(var_r * var_o, 0.0)) + 1e-12
            ncc = cross / denom
            ncc[var_o <= cfg.min_variance] = -np.inf
            ncc[ovg < 0.999] = -np.inf
            ncc[~legal] = -np.inf
            scores[i, j] = ncc

    scores[:, :, ~(textured & ref_valid)] = -np.inf
    flat = scores.reshape(n_dx * n_dy, h, w)
    best_flat = np.argmax(flat, axis=0)
    best_s = np.take_along_axis(flat, best_flat[None], axis=0)[0]
    matched = np.isfinite(best_s)
    best_i = best_flat // n_dy
    best_j = best_flat % n_dy

    # parabolic sub-pixel refinement along dx at the winning vertical offset
    im = np.clip(best_i, 1, n_dx - 2)
    at_dy = np.take_along_axis(
        scores, best_j[None, None], axis=1)[:, 0]       # (n_dx, h, w)
    s0 = np.take_along_axis(at_dy, (im - 1)[None], axis=0)[0]
    s1 = np.take_along_axis(at_dy, im[None], axis=0)[0]
    s2 = np.take_along_axis(at_dy, (im + 1)[None], axis=0)[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = s0 - 2.0 * s1 + s2
        delta = 0.5 * (s0 - s2) / denom
    usable = (np.isfinite(delta) & (denom < 0) & (im == best_i)
              & np.isfinite(s0) & np.isfinite(s2))
    delta = np.where(usable, np.clip(delta, -0.5, 0.5), 0.0)

    disp = base + dx_lo + best_i + delta
    disp = np.clip(disp, 0.0, d_cap)
    disp[~matched] = 0.0
    return disp.astype(np.float64), matched


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    return cv2.resize(img.astype(np.float32), (max(1, w // 2), max(1, h // 2)),
                      interpolation=cv2.INTER_AREA)


def _match_one_direction(ref, other, ref_valid, other_valid, cfg, max_disp):
    levels = [(ref.astype(np.float32), other.astype(np.float32),
               ref_valid.astype(np.float32), other_valid.astype(np.float32))]
    for _ in range(cfg.levels - 1):
        r, o, rv, ov = levels[-1]
        levels.append((_downsample(r), _downsample(o),
                       _downsample(rv), _downsample(ov)))

    disp = None
    for lv in range(cfg.levels - 1, -1, -1):
        r, o, rv, ov = levels[lv]
        h, w = r.shape
        if min(h, w) < cfg.patch:
            raise StereopaneError("images smaller than the matching patch")
        rv_b = rv >= 0.999
        ov_b = ov >= 0.999
        d_cap = max(1, int(np.ceil(max_disp / (2 ** lv))))
        if lv == cfg.levels - 1:
            base = np.zeros((h, w), np.int64)
            dx_lo, dx_hi = 0, d_cap
        else:
            up = cv2.resize(disp.astype(np.float32), (w, h),
                            interpolation=cv2.INTER_LINEAR) * 2.0
            base = np.round(np.clip(up, 0, d_cap)).astype(np.int64)
            dx_lo, dx_hi = -2, 2
        dys = range(-cfg.vertical_slack, cfg.vertical_slack + 1) if lv == 0 \
            else range(-1, 2)
        disp, matched = _search_level(r, o, rv_b, ov_b, base, dx_lo, dx_hi,
                                      list(dys), cfg, d_cap)
    return disp, matched


def _fill_from_sides(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Background extension along rows: an invalid run takes the smaller of
    its two flanking valid values (occluded regions belong to the background,
    which has the lower disparity). Columns catch fully invalid rows."""
    def fill_axis(vals, ok):
        h, w = vals.shape
        idx = np.where(ok, np.arange(w)[None, :], -1)
        left_idx = np.maximum.accumulate(idx, axis=1)
        ridx = np.where(ok[:, ::-1], np.arange(w)[None, :], -1)
        right_idx = w - 1 - np.maximum.accumulate(ridx, axis=1)[:, ::-1]
        rows = np.arange(h)[:, None]
        lv = np.where(left_idx >= 0, vals[rows, np.maximum(left_idx, 0)], np.inf)
        has_right = right_idx <= w - 1
        rv = np.where(has_right, vals[rows, np.clip(right_idx, 0, w - 1)], np.inf)
        cand = np.minimum(lv, rv)
        return np.where(ok, vals, cand), ok | np.isfinite(cand)

    out, ok = fill_axis(values.copy(), valid.copy())
    if not ok.all():
        out_t, ok_t = fill_axis(out.T, ok.T)
        out, ok = out_t.T, ok_t.T
    out[~ok] = 0.0
    return out


def _cross_check(dl, dr, tol):
    """|d_l(p) - d_r(p - d_l(p))| <= tol with an in-bounds target, applied
    between the left map and the (mirrored-sense) right map."""
    h, w = dl.shape
    xs = np.arange(w)[None, :].repeat(h, 0)
    tgt = np.round(xs - dl).astype(np.int64)
    inb = (tgt >= 0) & (tgt < w)
    dr_at = np.take_along_axis(dr, np.clip(tgt, 0, w - 1), axis=1)
    return inb & (np.abs(dl - dr_at) <= tol)


def dense_disparity_pair(pair: RectifiedPair, cfg: MatcherConfig | None = None):
    """Dense disparity for both directions of a rectified pair.

    Matches left-against-right and right-against-left, invalidates pixels
    that fail the cross-check, fills them by background extension, and keeps
    as valid exactly the pixels whose final values are corroborated by the
    opposite map (so the left-right consistency invariant holds on every
    reported-valid pixel by construction). Returns (left_map, right_map);
    the right map stores right-to-left displacement in the same sign
    convention.
    """
    cfg = cfg or MatcherConfig()
    left, right = pair.left.data, pair.right.data
    if left.shape != right.shape:
        raise StereopaneError("rectified pair dimensions differ")
    h, w = left.shape
    if min(h, w) < cfg.patch:
        raise StereopaneError("images smaller than the matching patch")
    max_disp = cfg.max_disp if cfg.max_disp is not None else max(8, w // 4)

    d_l, m_l = _match_one_direction(left, right, pair.left_valid,
                                    pair.right_valid, cfg, max_disp)
    d_rf, m_rf = _match_one_direction(right[:, ::-1], left[:, ::-1],
                                      pair.right_valid[:, ::-1],
                                      pair.left_valid[:, ::-1], cfg, max_disp)
    d_r = d_rf[:, ::-1].copy()
    m_r = m_rf[:, ::-1].copy()

    # right map in left-map orientation: d_r(x) pairs right pixel x with
    # left pixel x + d_r(x); mirroring turns the cross-check into the same
    # formula both ways
    ok_l = m_l & _cross_check(d_l, np.where(m_r, d_r, np.inf), cfg.consistency_px)
    ok_r_m = (m_r & _cross_check(d_r[:, ::-1], np.where(m_l, d_l, np.inf)[:, ::-1],
                                 cfg.consistency_px)[:, ::-1])

    # 3x3 median on the densely filled maps: kills single-pixel sub-pixel
    # speckle (which would shred the depth mesh) while keeping edges
    def clean(data):
        filled = np.clip(data, 0.0, float(w))
        if min(h, w) >= 3:
            filled = ndimage.median_filter(filled, size=3, mode="nearest")
        return filled

    fl = clean(_fill_from_sides(d_l, ok_l))
    fr = clean(_fill_from_sides(d_r, ok_r_m))

    valid_l = _cross_check(fl, fr, cfg.consistency_px)
    valid_r = _cross_check(fr[:, ::-1], fl[:, ::-1], cfg.consistency_px)[:, ::-1]
    return DisparityMap(fl, valid_l), DisparityMap(fr, valid_r)


def dense_disparity(pair: RectifiedPair, cfg: MatcherConfig | None = None) -> DisparityMap:
    """Dense left-to-right disparity for a rectified pair (see
    dense_disparity_pair); invalid pixels carry background-extended
    estimates."""
    return dense_disparity_pair(pair, cfg)[0]


def disparity_to_depth(disp: DisparityMap, focal: float, baseline: float):
    """Depth from rectified-stereo geometry: D = focal * baseline / d.

    Disparities at or below ZERO_DISPARITY_EPS clamp to the far depth
    focal*baseline/eps instead of diverging; returns (DepthMap, far_clamped)
    where the second mask flags those pixels. Validity is propagated.
    """
    if focal <= 0 or baseline <= 0:
        raise StereopaneError("focal and baseline must be positive")
    far = disp.data <= ZERO_DISPARITY_EPS
    depth = focal * baseline / np.maximum(disp.data, ZERO_DISPARITY_EPS)
    return DepthMap(depth, disp.valid), far


def letterbox_disparity(disp: DisparityMap, size: int):
    """Uniformly rescale into a size x size frame, padding with invalid
    pixels to preserve aspect; disparity values scale with the resize."""
    h, w = disp.shape
    s = min(size / w, size / h)
    nw, nh = max(1, round(w * s)), max(1, round(h * s))
    data = cv2.resize(disp.data.astype(np.float32), (nw, nh),
                      interpolation=cv2.INTER_AREA) * s
    valid = cv2.resize(disp.valid.astype(np.float32), (nw, nh),
                       interpolation=cv2.INTER_AREA) >= 0.999
    out = np.zeros((size, size), np.float64)
    out_valid = np.zeros((size, size), bool)
    y0 = (size - nh) // 2
    x0 = (size - nw) // 2
    out[y0:y0 + nh, x0:x0 + nw] = np.clip(data, 0.0, float(size))
    out_valid[y0:y0 + nh, x0:x0 + nw] = valid
    return DisparityMap(out, out_valid)
