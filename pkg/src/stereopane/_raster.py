"""Software rasterization kernels.

Z-buffered scanline rasterization with perspective-correct attribute
interpolation, compiled with numba. Two triangle sources are supported: the
grid path for meshes that keep their source-pixel lattice (the common case,
heavily optimized) and a generic indexed-triangle path.

Determinism: the screen is split into a fixed number of horizontal bands that
partition the pixel rows; each band processes triangles in index order, so a
strict depth comparison makes the lowest-index triangle win ties regardless of
how many worker threads execute the bands.

The depth buffers store inverse z (larger = nearer, 0 = uncovered), which
avoids per-pixel divisions on the hot path; intensity buffers store the
perspective-correct numerator intensity/z and are resolved to plain intensity
once per frame.
"""

from __future__ import annotations

import numba
import numpy as np
from numba import njit, prange

# pick the OpenMP layer up front; probing TBB first only produces noise here
numba.config.THREADING_LAYER = "omp"

N_BANDS = 16
NEAR_CLIP = 1e-9
# float32 transforms can land a pixel center a hair outside its triangle;
# inside tests and bounding boxes tolerate this much slack
INSIDE_EPS = 1e-4
BBOX_EPS = 1e-3

_F32 = np.float32


@njit(parallel=True, cache=True, fastmath=True)
def transform_grid(pos, intens, vvalid, rot, eye, focal, cx, cy,
                   sx, sy, iz, ioz, rowmin, rowmax):
    """Project a world-position grid into screen space.

    Writes screen x/y, inverse z-distance (0 marks invalid or behind-camera
    vertices) and intensity/z into the preallocated float32 buffers, plus the
    per-grid-row min/max of projected y used for band rejection.
    """
    gh, gw = pos.shape[0], pos.shape[1]
    r00 = rot[0, 0]; r10 = rot[1, 0]; r20 = rot[2, 0]
    r01 = rot[0, 1]; r11 = rot[1, 1]; r21 = rot[2, 1]
    r02 = rot[0, 2]; r12 = rot[1, 2]; r22 = rot[2, 2]
    ex = eye[0]; ey = eye[1]; ez = eye[2]
    for r in prange(gh):
        rmin = _F32(1e30)
        rmax = _F32(-1e30)
        for c in range(gw):
            if vvalid[r, c] == 0:
                sx[r, c] = _F32(0.0); sy[r, c] = _F32(0.0)
                iz[r, c] = _F32(0.0); ioz[r, c] = _F32(0.0)
                continue
            dx = pos[r, c, 0] - ex
            dy = pos[r, c, 1] - ey
            dz = pos[r, c, 2] - ez
            # camera coordinates: columns of rot are the camera axes
            xc = r00 * dx + r10 * dy + r20 * dz
            yc = r01 * dx + r11 * dy + r21 * dz
            zc = r02 * dx + r12 * dy + r22 * dz
            depth = -zc
            if depth <= NEAR_CLIP:
                sx[r, c] = _F32(0.0); sy[r, c] = _F32(0.0)
                iz[r, c] = _F32(0.0); ioz[r, c] = _F32(0.0)
                continue
            inv = 1.0 / depth
            px = _F32(cx + focal * xc * inv)
            py = _F32(cy - focal * yc * inv)
            sx[r, c] = px
            sy[r, c] = py
            iz[r, c] = _F32(inv)
            ioz[r, c] = _F32(intens[r, c] * inv)
            if py < rmin:
                rmin = py
            if py > rmax:
                rmax = py
        rowmin[r] = rmin
        rowmax[r] = rmax


@njit(parallel=True, cache=True, fastmath=True)
def raster_grid(sx, sy, iz, ioz, keep, rowmin, rowmax, izbuf, ibuf, h, w, n_bands):
    """Rasterize a grid mesh: cell (r, c) holds triangles
    ((r,c),(r+1,c),(r,c+1)) and ((r,c+1),(r+1,c),(r+1,c+1)), kept per the
    bits of ``keep[r, c]``. Coverage is inclusive (edge/vertex hits count for
    every touching triangle; the strict depth test keeps the first). Each
    band clears its own depth rows first, so one call fully owns the frame."""
    gh, gw = sx.shape
    izbuf_flat = izbuf.reshape(-1)
    band_h = (h + n_bands - 1) // n_bands
    for b in prange(n_bands):
        by0 = b * band_h
        by1 = min(h, by0 + band_h)
        if by1 <= by0:
            continue
        for p in range(by0 * w, by1 * w):
            izbuf_flat[p] = _F32(0.0)
        fy0 = _F32(by0)
        fy1 = _F32(by1 - 1)
        for r in range(gh - 1):
            if (max(rowmax[r], rowmax[r + 1]) < fy0
                    or min(rowmin[r], rowmin[r + 1]) > fy1):
                continue
            ax = sx[r, 0]; ay = sy[r, 0]
            bx = sx[r + 1, 0]; by = sy[r + 1, 0]
            va = iz[r, 0]; vb = iz[r + 1, 0]
            ua = ioz[r, 0]; ub = ioz[r + 1, 0]
            for c in range(gw - 1):
                cx = sx[r, c + 1]; cy = sy[r, c + 1]
                dx = sx[r + 1, c + 1]; dy = sy[r + 1, c + 1]
                vc = iz[r, c + 1]; vd = iz[r + 1, c + 1]
                uc = ioz[r, c + 1]; ud = ioz[r + 1, c + 1]
                k = keep[r, c]
                if k != 0:
                    ymin = min(min(ay, by), min(cy, dy))
                    ymax = max(max(ay, by), max(cy, dy))
                    ymin -= _F32(BBOX_EPS)
                    ymax += _F32(BBOX_EPS)
                    if not (ymax < fy0 or ymin > fy1):
                        py0 = int(ymin)
                        if py0 < ymin:
                            py0 += 1
                        py1 = int(ymax)
                        if py1 > ymax:
                            py1 -= 1
                        if py0 < by0:
                            py0 = by0
                        if py1 >= by1:
                            py1 = by1 - 1
                        if py1 >= py0:
                            xmin = min(min(ax, bx), min(cx, dx)) - _F32(BBOX_EPS)
                            xmax = max(max(ax, bx), max(cx, dx)) + _F32(BBOX_EPS)
                            px0 = int(xmin)
                            if px0 < xmin:
                                px0 += 1
                            px1 = int(xmax)
                            if px1 > xmax:
                                px1 -= 1
                            if px0 < 0:
                                px0 = 0
                            if px1 > w - 1:
                                px1 = w - 1
                            if px1 >= px0:
                                den0 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
                                den1 = (bx - cx) * (dy - cy) - (by - cy) * (dx - cx)
                                ok0 = (k & 1) != 0 and den0 != 0.0 and va > 0.0 and vb > 0.0 and vc > 0.0
                                ok1 = (k & 2) != 0 and den1 != 0.0 and vc > 0.0 and vb > 0.0 and vd > 0.0
                                inv0 = _F32(0.0)
                                inv1 = _F32(0.0)
                                if ok0:
                                    inv0 = _F32(1.0) / den0
                                if ok1:
                                    inv1 = _F32(1.0) / den1
                                if ok0 or ok1:
                                    for py in range(py0, py1 + 1):
                                        fpy = _F32(py)
                                        for px in range(px0, px1 + 1):
                                            fpx = _F32(px)
                                            # diagonal edge b->c splits the cell
                                            ed = (cx - bx) * (fpy - by) - (cy - by) * (fpx - bx)
                                            if ok0 and ed * den0 >= -INSIDE_EPS * den0 * den0:
                                                w0 = ed * inv0
                                                w1 = ((fpx - ax) * (cy - ay) - (fpy - ay) * (cx - ax)) * inv0
                                                w2 = _F32(1.0) - w0 - w1
                                                if w0 >= -INSIDE_EPS and w1 >= -INSIDE_EPS and w2 >= -INSIDE_EPS:
                                                    izi = w0 * va + w1 * vb + w2 * vc
                                                    if izi > izbuf[py, px]:
                                                        izbuf[py, px] = izi
                                                        ibuf[py, px] = w0 * ua + w1 * ub + w2 * uc
                                                    continue
                                            if ok1 and -ed * den1 >= -INSIDE_EPS * den1 * den1:
                                                wd = -ed * inv1
                                                w1 = ((fpx - cx) * (dy - cy) - (fpy - cy) * (dx - cx)) * inv1
                                                w0 = _F32(1.0) - wd - w1
                                                if wd >= -INSIDE_EPS and w1 >= -INSIDE_EPS and w0 >= -INSIDE_EPS:
                                                    izi = w0 * vc + w1 * vb + wd * vd
                                                    if izi > izbuf[py, px]:
                                                        izbuf[py, px] = izi
                                                        ibuf[py, px] = w0 * uc + w1 * ub + wd * ud
                ax = cx; ay = cy
                bx = dx; by = dy
                va = vc; vb = vd
                ua = uc; ub = ud


@njit(parallel=True, cache=True, fastmath=True)
def raster_tris(vx, vy, viz, vioz, tris, izbuf, ibuf, h, w, n_bands):
    """Generic indexed-triangle rasterization (same conventions as the grid
    path, same tie-break: triangle list order)."""
    n = tris.shape[0]
    izbuf_flat = izbuf.reshape(-1)
    band_h = (h + n_bands - 1) // n_bands
    for b in prange(n_bands):
        by0 = b * band_h
        by1 = min(h, by0 + band_h)
        if by1 <= by0:
            continue
        for p in range(by0 * w, by1 * w):
            izbuf_flat[p] = _F32(0.0)
        fy0 = _F32(by0)
        fy1 = _F32(by1 - 1)
        for t in range(n):
            i0 = tris[t, 0]; i1 = tris[t, 1]; i2 = tris[t, 2]
            z0 = viz[i0]; z1 = viz[i1]; z2 = viz[i2]
            if z0 <= 0.0 or z1 <= 0.0 or z2 <= 0.0:
                continue
            x0 = vx[i0]; y0 = vy[i0]
            x1 = vx[i1]; y1 = vy[i1]
            x2 = vx[i2]; y2 = vy[i2]
            ymin = min(y0, min(y1, y2)) - _F32(BBOX_EPS)
            ymax = max(y0, max(y1, y2)) + _F32(BBOX_EPS)
            if ymax < fy0 or ymin > fy1:
                continue
            py0 = int(ymin)
            if py0 < ymin:
                py0 += 1
            py1 = int(ymax)
            if py1 > ymax:
                py1 -= 1
            if py0 < by0:
                py0 = by0
            if py1 >= by1:
                py1 = by1 - 1
            if py1 < py0:
                continue
            xmin = min(x0, min(x1, x2)) - _F32(BBOX_EPS)
            xmax = max(x0, max(x1, x2)) + _F32(BBOX_EPS)
            px0 = int(xmin)
            if px0 < xmin:
                px0 += 1
            px1 = int(xmax)
            if px1 > xmax:
                px1 -= 1
            if px0 < 0:
                px0 = 0
            if px1 > w - 1:
                px1 = w - 1
            if px1 < px0:
                continue
            den = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
            if den == 0.0:
                continue
            inv = _F32(1.0) / den
            u0 = vioz[i0]; u1 = vioz[i1]; u2 = vioz[i2]
            for py in range(py0, py1 + 1):
                fpy = _F32(py)
                for px in range(px0, px1 + 1):
                    fpx = _F32(px)
                    w1w = ((fpx - x0) * (y2 - y0) - (fpy - y0) * (x2 - x0)) * inv
                    w2w = ((x1 - x0) * (fpy - y0) - (y1 - y0) * (fpx - x0)) * inv
                    w0w = _F32(1.0) - w1w - w2w
                    if w0w >= -INSIDE_EPS and w1w >= -INSIDE_EPS and w2w >= -INSIDE_EPS:
                        izi = w0w * z0 + w1w * z1 + w2w * z2
                        if izi > izbuf[py, px]:
                            izbuf[py, px] = izi
                            ibuf[py, px] = w0w * u0 + w1w * u1 + w2w * u2


@njit(parallel=True, cache=True, fastmath=True)
def fill_uncovered_rows(out, covered, h, w):
    """Give uncovered pixels the value of the nearest covered pixel in their
    row (ties go left). Returns the number of pixels still uncovered (rows
    with no coverage at all)."""
    remaining = 0
    for y in prange(h):
        row = y * w
        any_cov = False
        for x in range(w):
            if covered[row + x] != 0:
                any_cov = True
                break
        if not any_cov:
            remaining += w
            continue
        left = -1
        right = -1
        for x in range(w):
            if covered[row + x] != 0:
                left = x
                continue
            if right <= x:
                right = -1
                for k in range(x + 1, w):
                    if covered[row + k] != 0:
                        right = k
                        break
                if right == -1:
                    right = w  # none to the right anymore
            if left == -1:
                out[row + x] = out[row + right]
            elif right >= w:
                out[row + x] = out[row + left]
            elif x - left <= right - x:
                out[row + x] = out[row + left]
            else:
                out[row + x] = out[row + right]
    return remaining


@njit(parallel=True, cache=True, fastmath=True)
def composite_blend(izbufs, ibufs, weights, tol, out, cov, n_bands):
    """Blend per-mesh buffers into one intensity image.

    Among the meshes with positive blend weight, the nearest surface at each
    pixel sets the depth reference; surfaces within ``tol`` relative depth of
    it average with their weights renormalized, anything farther loses
    outright. Pixels no weighted mesh covers fall back to the nearest
    surface of the remaining meshes, so coverage never shrinks when a weight
    reaches zero. ``cov`` receives 1 where any mesh covered the pixel.
    """
    m = izbufs.shape[0]
    npix = izbufs.shape[1]
    chunk = (npix + n_bands - 1) // n_bands
    for b in prange(n_bands):
        lo = b * chunk
        hi = min(npix, lo + chunk)
        for p in range(lo, hi):
            best = _F32(0.0)
            for i in range(m):
                if weights[i] > 0.0 and izbufs[i, p] > best:
                    best = izbufs[i, p]
            if best > 0.0:
                cut = best / _F32(1.0 + tol)
                wsum = _F32(0.0)
                acc = _F32(0.0)
                for i in range(m):
                    zi = izbufs[i, p]
                    if weights[i] > 0.0 and zi >= cut:
                        wsum += weights[i]
                        acc += weights[i] * (ibufs[i, p] / zi)
                out[p] = acc / wsum
                cov[p] = 1
                continue
            # no weighted mesh covers this pixel: nearest of the rest
            for i in range(m):
                if izbufs[i, p] > best:
                    best = izbufs[i, p]
            if best > 0.0:
                cov[p] = 1
                for i in range(m):
                    if izbufs[i, p] == best:
                        out[p] = ibufs[i, p] / best
                        break
            else:
                out[p] = _F32(0.0)
                cov[p] = 0


def resolve_buffers(izbuf: np.ndarray, ibuf: np.ndarray):
    """Turn inverse-z / intensity-numerator buffers into intensity, depth and
    a coverage mask (float64 outputs)."""
    covered = izbuf > 0.0
    iz = np.where(covered, izbuf, 1.0).astype(np.float64)
    depth = 1.0 / iz
    intensity = np.where(covered, ibuf.astype(np.float64) * depth, 0.0)
    # interpolation in float32 can drift a hair outside [0, 1]
    np.clip(intensity, 0.0, 1.0, out=intensity)
    return intensity, depth, covered
