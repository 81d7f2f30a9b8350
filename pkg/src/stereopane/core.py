"""Domain types shared by every pipeline stage.

Rasters are stored as 2-D numpy arrays in row-major order. Intensities live
in [0, 1] as floats; 8/16-bit quantization happens only at file I/O. Pixel
validity is always a separate boolean mask, never an in-band sentinel value.
All types are immutable after construction (backing arrays are marked
read-only) and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class StereopaneError(Exception):
    """Base class for pipeline errors."""


def _as_readonly(a: np.ndarray, dtype=None) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=dtype)
    if out is a and a.flags.writeable:
        out = out.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ImageGray:
    """Single-channel intensity raster with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = _as_readonly(self.data, np.float64)
        if data.ndim != 2 or data.size == 0:
            raise StereopaneError("intensity raster must be a nonempty 2-D array")
        if not np.all(np.isfinite(data)):
            raise StereopaneError("intensity values must be finite")
        if data.min() < 0.0 or data.max() > 1.0:
            raise StereopaneError("intensity values must lie in [0, 1]")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel positive depths (scene units, scale-free) with a validity mask.

    Values at invalid pixels are unspecified and must never be read as depth;
    consumers consult ``valid`` first.
    """

    data: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        data = _as_readonly(self.data, np.float64)
        valid = _as_readonly(self.valid, bool)
        if data.ndim != 2 or data.size == 0:
            raise StereopaneError("depth raster must be a nonempty 2-D array")
        if valid.shape != data.shape:
            raise StereopaneError("depth and validity mask dimensions differ")
        v = data[valid]
        if v.size and (not np.all(np.isfinite(v)) or v.min() <= 0.0):
            raise StereopaneError("valid depths must be finite and > 0")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class NormalizedInverseDepth:
    """Inverse depth affinely mapped to [0, 1] over the valid pixels of one map.

    ``d_min`` and ``d_max_inv`` record the smallest and largest inverse depth
    so the mapping is invertible. A constant-depth input yields all zeros with
    ``degenerate`` set; downstream stages treat such maps as a single plane.
    """

    data: np.ndarray
    valid: np.ndarray
    d_min: float
    d_max_inv: float
    degenerate: bool = False

    def __post_init__(self):
        data = _as_readonly(self.data, np.float64)
        valid = _as_readonly(self.valid, bool)
        if data.ndim != 2 or data.size == 0:
            raise StereopaneError("raster must be a nonempty 2-D array")
        if valid.shape != data.shape:
            raise StereopaneError("data and validity mask dimensions differ")
        if not (np.isfinite(self.d_min) and np.isfinite(self.d_max_inv)):
            raise StereopaneError("stored inverse-depth range must be finite")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class GrayDepthImage:
    """Aligned intensity + depth rasters sharing one validity mask.

    The shared mask uses 1 = valid, 0 = hole. This is the unit the whole
    pipeline passes around: one of these per viewpoint.
    """

    intensity: ImageGray
    depth: DepthMap
    valid: np.ndarray

    def __post_init__(self):
        valid = _as_readonly(self.valid, bool)
        if self.intensity.shape != self.depth.shape:
            raise StereopaneError("intensity and depth dimensions differ")
        if valid.shape != self.intensity.shape:
            raise StereopaneError("validity mask dimensions differ from rasters")
        if not np.array_equal(valid, self.depth.valid):
            raise StereopaneError("depth validity must equal the shared mask")
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.intensity.shape

    @property
    def height(self) -> int:
        return self.intensity.height

    @property
    def width(self) -> int:
        return self.intensity.width

    def hole_count(self) -> int:
        return int((~self.valid).sum())


def make_gd(intensity: np.ndarray, depth: np.ndarray, valid: np.ndarray) -> GrayDepthImage:
    """Build a GrayDepthImage from raw arrays, sharing one validity mask."""
    valid = np.asarray(valid, bool)
    return GrayDepthImage(
        intensity=ImageGray(np.asarray(intensity, np.float64)),
        depth=DepthMap(np.where(valid, np.asarray(depth, np.float64), 1.0), valid),
        valid=valid,
    )


@dataclass(frozen=True)
class BoundaryMask:
    """Marks valid pixels on the foreground side of reprojection holes.

    Invariant: a set pixel is always a valid pixel 4-adjacent to at least one
    hole pixel.
    """

    data: np.ndarray

    def __post_init__(self):
        data = _as_readonly(self.data, bool)
        if data.ndim != 2 or data.size == 0:
            raise StereopaneError("boundary mask must be a nonempty 2-D array")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class CameraView:
    """Pinhole camera: position, orthonormal rotation, focal and principal point.

    The rotation's columns are the camera axes expressed in scene coordinates;
    the camera looks along its local -z axis. Pixel centers sit at integer
    coordinates, +x right, +y down.
    """

    position: np.ndarray
    rotation: np.ndarray
    focal: float
    principal: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        pos = _as_readonly(self.position, np.float64)
        rot = _as_readonly(self.rotation, np.float64)
        pp = _as_readonly(self.principal, np.float64)
        if pos.shape != (3,) or rot.shape != (3, 3) or pp.shape != (2,):
            raise StereopaneError("camera parameter shapes are wrong")
        if not np.isfinite(self.focal) or self.focal <= 0:
            raise StereopaneError("focal length must be positive")
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-9:
            raise StereopaneError("rotation is not orthonormal")
        if np.linalg.det(rot) < 0:
            raise StereopaneError("rotation must have determinant +1")
        if self.width <= 0 or self.height <= 0:
            raise StereopaneError("image dimensions must be positive")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "principal", pp)


def centered_camera(width: int, height: int, focal: float,
                    position=(0.0, 0.0, 0.0), rotation=None) -> CameraView:
    """CameraView with the principal point at the pixel-grid center."""
    if rotation is None:
        rotation = np.eye(3)
    return CameraView(
        position=np.asarray(position, np.float64),
        rotation=np.asarray(rotation, np.float64),
        focal=float(focal),
        principal=np.array([(width - 1) / 2.0, (height - 1) / 2.0]),
        width=int(width),
        height=int(height),
    )


def normalize_inverse_depth(depth: DepthMap) -> NormalizedInverseDepth:
    """Map valid depths to [0, 1] via their affinely rescaled inverse.

    The minimum valid inverse depth maps to 0 and the maximum to 1. A
    constant-depth map (or a single valid pixel) has no range; it maps to all
    zeros with the degenerate flag set instead of erroring, since flat scenes
    occur in real scans and must not abort the pipeline.
    """
    if not depth.valid.any():
        raise StereopaneError("empty depth")
    inv = np.zeros(depth.shape, np.float64)
    v = depth.valid
    inv[v] = 1.0 / depth.data[v]
    d_min = float(inv[v].min())
    d_max = float(inv[v].max())
    if d_max > d_min:
        out = np.where(v, (inv - d_min) / (d_max - d_min), 0.0)
        return NormalizedInverseDepth(out, v, d_min, d_max, degenerate=False)
    return NormalizedInverseDepth(np.zeros(depth.shape), v, d_min, d_max, degenerate=True)


def denormalize(nid: NormalizedInverseDepth) -> DepthMap:
    """Invert normalize_inverse_depth using the stored inverse-depth range."""
    if not (nid.d_max_inv >= nid.d_min > 0.0):
        raise StereopaneError("stored inverse-depth range is not usable")
    inv = nid.d_min + nid.data * (nid.d_max_inv - nid.d_min)
    depth = np.where(nid.valid, 1.0 / np.maximum(inv, 1e-300), 1.0)
    return DepthMap(depth, nid.valid)
