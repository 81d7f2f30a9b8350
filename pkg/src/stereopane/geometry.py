"""Scene rig construction, depth meshing and reprojection rendering.

Coordinate conventions: the reference camera sits at the origin looking along
-z with +y up; pixel centers are at integer coordinates with +y down. Depth is
the distance along a camera's optical axis the whole way through, so a
rendered gray+depth image can be re-meshed and rendered again, which is what
the double-reprojection hole synthesis relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _raster
from .core import (
    BoundaryMask,
    CameraView,
    DepthMap,
    GrayDepthImage,
    StereopaneError,
    make_gd,
)

# Corner viewpoints are placed so that the nearest scene content shifts by at
# most this many pixels between the reference view and a quad corner.
MAX_CORNER_SHIFT_PX = 96.0

# A triangle is dropped when any two of its vertex depths differ by more than
# this fraction of the smaller one (it would straddle a depth boundary).
TRIANGLE_DEPTH_THRESHOLD = 0.1

_CROSS4 = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class QuadRig:
    """Five viewpoints: the reference v0 plus the four quad corners, with the
    corner cameras oriented toward the scene center."""

    center: np.ndarray
    r_w: float
    r_h: float
    views: tuple[CameraView, ...]
    up: np.ndarray

    def __post_init__(self):
        if len(self.views) != 5:
            raise StereopaneError("a rig holds exactly five views")
        object.__setattr__(self, "center", np.asarray(self.center, np.float64))
        object.__setattr__(self, "up", np.asarray(self.up, np.float64))


class DepthMesh:
    """Textured triangle mesh lifted from a gray+depth image.

    ``positions`` (N, 3), ``intensities`` (N,), ``source_pixels`` (N, 2) and
    ``triangles`` (M, 3) describe the mesh. Meshes built from a pixel grid
    additionally keep the grid layout so the renderer can use the fast path;
    both paths rasterize triangles in identical order.
    """

    def __init__(self, positions, intensities, source_pixels, triangles,
                 grid=None):
        self.positions = np.ascontiguousarray(positions, np.float64)
        self.intensities = np.ascontiguousarray(intensities, np.float64)
        self.source_pixels = np.ascontiguousarray(source_pixels, np.float64)
        self.triangles = np.ascontiguousarray(triangles, np.int64)
        if self.triangles.shape[0] < 1:
            raise StereopaneError("degenerate mesh")
        self._grid = grid

    def __len__(self) -> int:
        return self.triangles.shape[0]


class _MeshGrid:
    """Grid-structured mesh data for the fast rasterization path."""

    __slots__ = ("pos", "intens", "valid", "keep")

    def __init__(self, pos, intens, valid, keep):
        self.pos = pos          # (gh, gw, 3) float64 world positions
        self.intens = intens    # (gh, gw) float64
        self.valid = valid      # (gh, gw) uint8
        self.keep = keep        # (gh-1, gw-1) uint8, bit 0/1 per cell triangle


def look_at(position, target, up) -> np.ndarray:
    """Rotation whose -z axis points from ``position`` toward ``target``."""
    position = np.asarray(position, np.float64)
    target = np.asarray(target, np.float64)
    up = np.asarray(up, np.float64)
    fwd = target - position
    n = np.linalg.norm(fwd)
    if n == 0.0:
        return np.eye(3)
    fwd = fwd / n
    right = np.cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise StereopaneError("look-at direction is parallel to the up vector")
    right = right / rn
    true_up = np.cross(right, fwd)
    rot = np.stack([right, true_up, -fwd], axis=1)
    # re-orthonormalize to meet the 1e-9 orthonormality contract exactly
    u, _, vt = np.linalg.svd(rot)
    return u @ vt


def backproject_grid(depth: np.ndarray, cam: CameraView) -> np.ndarray:
    """World positions of every pixel center at the given depths, (h, w, 3)."""
    h, w = depth.shape
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    px, py = np.meshgrid(xs, ys)
    xc = (px - cam.principal[0]) * depth / cam.focal
    yc = -(py - cam.principal[1]) * depth / cam.focal
    zc = -depth
    local = np.stack([xc, yc, zc], axis=-1)
    return cam.position + local @ cam.rotation.T


def project_points(points: np.ndarray, cam: CameraView):
    """Project world points; returns (screen_xy (N, 2), axis depth (N,))."""
    local = (np.asarray(points, np.float64) - cam.position) @ cam.rotation
    depth = -local[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = cam.principal[0] + cam.focal * local[:, 0] / depth
        sy = cam.principal[1] - cam.focal * local[:, 1] / depth
    return np.stack([sx, sy], axis=1), depth


def compute_rig(ref_depth: DepthMap, d_max: float, baseline: float,
                cam: CameraView) -> QuadRig:
    """Build the five-viewpoint rig around a reference depth map.

    The scene center sits on the optical axis at the median valid depth
    (median of inverse depths, inverted); the quad half-extents are chosen so
    the nearest content (disparity ``d_max``) moves by at most
    ``MAX_CORNER_SHIFT_PX`` pixels from the reference view to any corner.
    """
    if d_max <= 0:
        raise StereopaneError("d_max must be positive")
    if not ref_depth.valid.any():
        raise StereopaneError("empty depth")
    inv = 1.0 / ref_depth.data[ref_depth.valid]
    med = float(np.median(inv))
    center = np.array([0.0, 0.0, -1.0 / med])
    r = (MAX_CORNER_SHIFT_PX * baseline / d_max) * (np.sqrt(2.0) / 2.0)
    up = np.array([0.0, 1.0, 0.0])
    corners = [(-r, r, 0.0), (r, r, 0.0), (-r, -r, 0.0), (r, -r, 0.0)]
    views = [CameraView(np.zeros(3), np.eye(3), cam.focal, cam.principal,
                        cam.width, cam.height)]
    for p in corners:
        pos = np.array(p)
        views.append(CameraView(pos, look_at(pos, center, up), cam.focal,
                                cam.principal, cam.width, cam.height))
    return QuadRig(center=center, r_w=r, r_h=r, views=tuple(views), up=up)


def _cell_keep_flags(depth: np.ndarray, valid: np.ndarray,
                     threshold: float) -> np.ndarray:
    """Per-cell keep bits for the two triangles of each 2x2 block."""
    a = depth[:-1, :-1]
    b = depth[1:, :-1]
    c = depth[:-1, 1:]
    d = depth[1:, 1:]
    all_valid = valid[:-1, :-1] & valid[1:, :-1] & valid[:-1, 1:] & valid[1:, 1:]

    def pair_ok(x, y):
        return np.abs(x - y) <= threshold * np.minimum(x, y)

    ab = pair_ok(a, b)
    ac = pair_ok(a, c)
    bc = pair_ok(b, c)
    bd = pair_ok(b, d)
    cd = pair_ok(c, d)
    t0 = all_valid & ab & ac & bc
    t1 = all_valid & bc & bd & cd
    return (t0.astype(np.uint8) | (t1.astype(np.uint8) << 1)).astype(np.uint8)


def depth_to_mesh(gd: GrayDepthImage, cam: CameraView,
                  threshold: float = TRIANGLE_DEPTH_THRESHOLD) -> DepthMesh:
    """Lift a gray+depth image to a textured mesh through its camera.

    One vertex per valid pixel, two triangles per fully valid 2x2 block; a
    triangle is dropped when any two of its vertex depths differ by more than
    ``threshold`` relative to the smaller, so surfaces never bridge depth
    boundaries.
    """
    valid = gd.valid
    depth = np.where(valid, gd.depth.data, 1.0)
    pos = backproject_grid(depth, cam)
    pos[~valid] = 0.0
    keep = _cell_keep_flags(depth, valid, threshold)
    if not keep.any():
        raise StereopaneError("degenerate mesh")

    h, w = depth.shape
    vidx = np.full((h, w), -1, np.int64)
    vidx[valid] = np.arange(int(valid.sum()))
    ys, xs = np.nonzero(valid)
    positions = pos[valid]
    intensities = gd.intensity.data[valid]
    source_pixels = np.stack([xs, ys], axis=1).astype(np.float64)

    a = vidx[:-1, :-1]
    b = vidx[1:, :-1]
    c = vidx[:-1, 1:]
    d = vidx[1:, 1:]
    t0 = np.stack([a, b, c], axis=-1)
    t1 = np.stack([c, b, d], axis=-1)
    tris = np.empty((h - 1, w - 1, 2, 3), np.int64)
    tris[..., 0, :] = t0
    tris[..., 1, :] = t1
    mask = np.stack([(keep & 1).astype(bool), (keep & 2).astype(bool)], axis=-1)
    triangles = tris[mask]

    grid = _MeshGrid(
        pos=np.ascontiguousarray(pos, np.float32),
        intens=np.ascontiguousarray(np.where(valid, gd.intensity.data, 0.0),
                                    np.float32),
        valid=np.ascontiguousarray(valid.astype(np.uint8)),
        keep=np.ascontiguousarray(keep),
    )
    return DepthMesh(positions, intensities, source_pixels, triangles, grid=grid)


class _RenderArena:
    """Reusable per-camera-size buffers for one mesh rasterization."""

    def __init__(self, mesh: DepthMesh, width: int, height: int):
        self.width = width
        self.height = height
        g = mesh._grid
        if g is not None:
            gh, gw = g.valid.shape
            self.sx = np.empty((gh, gw), np.float32)
            self.sy = np.empty((gh, gw), np.float32)
            self.iz = np.empty((gh, gw), np.float32)
            self.ioz = np.empty((gh, gw), np.float32)
            self.rowmin = np.empty(gh, np.float32)
            self.rowmax = np.empty(gh, np.float32)
        self.izbuf = np.zeros((height, width), np.float32)
        self.ibuf = np.zeros((height, width), np.float32)

    def rasterize(self, mesh: DepthMesh, cam: CameraView) -> None:
        self.add_mesh(mesh, cam)

    def add_mesh(self, mesh: DepthMesh, cam: CameraView) -> None:
        # the kernels clear their own depth bands; one call owns the frame
        g = mesh._grid
        if g is not None:
            _raster.transform_grid(
                g.pos, g.intens, g.valid, cam.rotation, cam.position,
                cam.focal, cam.principal[0], cam.principal[1],
                self.sx, self.sy, self.iz, self.ioz, self.rowmin, self.rowmax)
            _raster.raster_grid(
                self.sx, self.sy, self.iz, self.ioz, g.keep,
                self.rowmin, self.rowmax, self.izbuf, self.ibuf,
                self.height, self.width, _raster.N_BANDS)
        else:
            xy, depth = project_points(mesh.positions, cam)
            ok = depth > _raster.NEAR_CLIP
            viz = np.where(ok, 1.0 / np.where(ok, depth, 1.0), 0.0)
            vx = np.where(ok, xy[:, 0], 0.0).astype(np.float32)
            vy = np.where(ok, xy[:, 1], 0.0).astype(np.float32)
            vioz = (mesh.intensities * viz).astype(np.float32)
            _raster.raster_tris(
                vx, vy, viz.astype(np.float32), vioz, mesh.triangles,
                self.izbuf, self.ibuf, self.height, self.width,
                _raster.N_BANDS)


def render(mesh: DepthMesh, cam: CameraView) -> GrayDepthImage:
    """Rasterize a mesh into a gray+depth image at the given camera.

    Z-buffered with perspective-correct interpolation; depth ties go to the
    lower triangle index. Pixels covered by no triangle come back as holes.
    The depth channel stores distance along the camera's optical axis.
    """
    arena = _RenderArena(mesh, cam.width, cam.height)
    arena.rasterize(mesh, cam)
    intensity, depth, covered = _raster.resolve_buffers(arena.izbuf, arena.ibuf)
    return make_gd(intensity, depth, covered)


def double_reproject(gd: GrayDepthImage, cam: CameraView,
                     target: CameraView) -> np.ndarray:
    """Synthesize the disocclusion hole mask for a viewpoint change.

    Meshes ``gd``, renders it at ``target``, re-meshes the (now holed) result
    and renders it back at ``cam``. Returns the boolean mask of pixels that
    were valid in ``gd`` but did not survive the round trip. The intermediate
    viewport is expanded to cover every projected vertex so image-border
    cropping never masquerades as disocclusion.
    """
    mesh = depth_to_mesh(gd, cam)
    xy, depth = project_points(mesh.positions, target)
    front = depth > _raster.NEAR_CLIP
    if not front.any():
        return gd.valid.copy()
    xs = xy[front, 0]
    ys = xy[front, 1]
    pad = 2
    x0 = int(np.floor(xs.min())) - pad
    y0 = int(np.floor(ys.min())) - pad
    x1 = int(np.ceil(xs.max())) + pad
    y1 = int(np.ceil(ys.max())) + pad
    # keep pathological projections bounded
    max_dim = 8 * max(cam.width, cam.height)
    wi = min(x1 - x0 + 1, max_dim)
    hi = min(y1 - y0 + 1, max_dim)
    inter_cam = CameraView(
        position=target.position,
        rotation=target.rotation,
        focal=target.focal,
        principal=np.array([target.principal[0] - x0, target.principal[1] - y0]),
        width=wi,
        height=hi,
    )
    inter = render(mesh, inter_cam)
    mesh_back = depth_to_mesh(inter, inter_cam)
    back = render(mesh_back, cam)
    return gd.valid & ~back.valid


def boundary_mask(gd: GrayDepthImage, holes: np.ndarray,
                  ring_radius: float = 5.0,
                  depth_ratio: float = 1.1) -> BoundaryMask:
    """Mark the foreground side of hole borders.

    For each connected hole component, valid pixels 4-adjacent to it are
    marked when their inverse depth exceeds the median inverse depth of the
    valid pixels within ``ring_radius`` of the component by ``depth_ratio``.
    Holes punched into constant-depth regions therefore mark nothing.
    """
    holes = np.asarray(holes, bool)
    if holes.shape != gd.shape:
        raise StereopaneError("hole mask dimensions differ from the image")
    out = np.zeros(gd.shape, bool)
    valid = gd.valid & ~holes
    if not holes.any() or not valid.any():
        return BoundaryMask(out)
    inv = np.zeros(gd.shape)
    inv[valid] = 1.0 / gd.depth.data[valid]
    labels, n = ndimage.label(holes, structure=_CROSS4)
    for comp in range(1, n + 1):
        comp_mask = labels == comp
        dist = ndimage.distance_transform_edt(~comp_mask)
        ring = (dist <= ring_radius) & ~comp_mask & valid
        if not ring.any():
            continue
        ring_median = np.median(inv[ring])
        border = ndimage.binary_dilation(comp_mask, _CROSS4) & valid
        out |= border & (inv >= depth_ratio * ring_median)
    return BoundaryMask(out)
