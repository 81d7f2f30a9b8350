"""Real-time novel-view synthesis from a five-viewpoint scene bundle.

All five meshes render into per-mesh z-buffers; where several surfaces land
within a relative depth tolerance of the nearest one, their intensities blend
with weights driven by the eye position inside the quad (the reference view
dominates at the center, each corner takes over toward its corner), giving
seam-free motion. The tile scheduler uses a fixed band count so output is
bit-identical no matter how many worker threads run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numba
import numpy as np

from . import _raster
from .core import CameraView, ImageGray, StereopaneError
from .geometry import _RenderArena, depth_to_mesh

DEPTH_BLEND_TOLERANCE = 0.01


@dataclass(frozen=True)
class HeadVolume:
    """Box of permitted eye positions, derived from the rig extents."""

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    z_range: tuple[float, float]

    @classmethod
    def from_rig(cls, r_w: float, r_h: float) -> "HeadVolume":
        return cls(x_range=(-r_w / 4.0, r_w / 4.0),
                   y_range=(-r_h / 4.0, r_h / 4.0),
                   z_range=(-1.5 * r_w, 0.0))

    def clamp(self, eye) -> np.ndarray:
        eye = np.asarray(eye, np.float64)
        return np.array([
            np.clip(eye[0], *self.x_range),
            np.clip(eye[1], *self.y_range),
            np.clip(eye[2], *self.z_range),
        ])

    def as_dict(self) -> dict:
        return {"x": list(self.x_range), "y": list(self.y_range),
                "z": list(self.z_range)}


def blend_weights(x: float, y: float, r_w: float, r_h: float) -> np.ndarray:
    """Raw blend weights for (v0, v1..v4) at an eye position; the compositor
    renormalizes over the meshes actually contributing at each pixel."""
    nx = x / r_w if r_w > 0 else 0.0
    ny = y / r_h if r_h > 0 else 0.0
    nx = float(np.clip(nx, -1.0, 1.0))
    ny = float(np.clip(ny, -1.0, 1.0))
    px, mx = max(nx, 0.0), max(-nx, 0.0)
    py, my = max(ny, 0.0), max(-ny, 0.0)
    w0 = (1.0 - abs(nx)) * (1.0 - abs(ny))
    # corner order: (-r_w,+r_h), (+r_w,+r_h), (-r_w,-r_h), (+r_w,-r_h)
    return np.array([w0, mx * py, px * py, mx * my, px * my])


@dataclass
class TimingReport:
    mean_ms: float
    median_ms: float
    p99_ms: float
    frame_ms: list[float] = field(default_factory=list)

    @classmethod
    def from_times(cls, times_ms: list[float]) -> "TimingReport":
        if not times_ms:
            return cls(0.0, 0.0, 0.0, [])
        arr = np.asarray(times_ms)
        return cls(float(arr.mean()), float(np.median(arr)),
                   float(np.percentile(arr, 99)), list(times_ms))


class SceneRenderer:
    """Holds the five meshes plus reusable raster arenas for one bundle.

    Construction does the one-time work (meshing, buffer allocation, JIT
    warm-up); synthesize then runs with no per-frame allocation on the hot
    path. Safe to call synthesize repeatedly; worker count is adjustable per
    call up to the process thread limit.
    """

    def __init__(self, bundle, workers: int = 1):
        from .bundle import SceneBundle  # local import to avoid a cycle
        if not isinstance(bundle, SceneBundle):
            raise StereopaneError("a loaded SceneBundle is required")
        self.bundle = bundle
        self.rig = bundle.rig
        self.head = bundle.head
        self.workers = int(workers)
        ref = self.rig.views[0]
        self.width, self.height = ref.width, ref.height
        self.meshes = [depth_to_mesh(gd, view)
                       for gd, view in zip(bundle.gds, self.rig.views)]
        self.arenas = [_RenderArena(m, self.width, self.height)
                       for m in self.meshes]
        n = self.width * self.height
        self._izbufs = np.zeros((5, n), np.float32)
        self._ibufs = np.zeros((5, n), np.float32)
        self._out = np.zeros(n, np.float32)
        self._cov = np.zeros(n, np.uint8)
        self._weights = np.zeros(5, np.float32)
        # point the arenas at the shared per-mesh buffers once
        for i, arena in enumerate(self.arenas):
            arena.izbuf = self._izbufs[i].reshape(self.height, self.width)
            arena.ibuf = self._ibufs[i].reshape(self.height, self.width)

    def _close_pinholes(self) -> None:
        """Fill pixels no mesh covered from the nearest covered pixel in
        their row, then column-wise for fully empty rows. Thin seams where
        every mesh's discontinuity gaps align would otherwise show as
        pinholes."""
        remaining = _raster.fill_uncovered_rows(self._out, self._cov,
                                                self.height, self.width)
        if remaining == 0:
            return
        out = self._out.reshape(self.height, self.width)
        cov = self._cov.reshape(self.height, self.width).astype(bool)
        row_has = cov.any(axis=1)
        if not row_has.any():
            return
        rows = np.arange(self.height)
        good = rows[row_has]
        for y in rows[~row_has]:
            near = good[np.argmin(np.abs(good - y))]
            out[y] = out[near]

    def _set_workers(self, workers: int | None):
        w = self.workers if workers is None else int(workers)
        numba.set_num_threads(max(1, min(w, numba.config.NUMBA_NUM_THREADS)))

    def synthesize_raw(self, eye, rotation=None, workers: int | None = None):
        """Render into the internal buffers; returns (intensity float32 view,
        coverage mask). The intensity buffer is reused across calls."""
        self._set_workers(workers)
        eye = self.head.clamp(eye)
        rotation = np.eye(3) if rotation is None else np.asarray(rotation, np.float64)
        ref = self.rig.views[0]
        cam = CameraView(eye, rotation, ref.focal, ref.principal,
                         self.width, self.height)
        for mesh, arena in zip(self.meshes, self.arenas):
            arena.add_mesh(mesh, cam)
        self._weights[:] = blend_weights(eye[0], eye[1], self.rig.r_w,
                                         self.rig.r_h).astype(np.float32)
        _raster.composite_blend(self._izbufs, self._ibufs, self._weights,
                                DEPTH_BLEND_TOLERANCE, self._out, self._cov,
                                _raster.N_BANDS)
        out = self._out.reshape(self.height, self.width)
        if self._cov.all():
            coverage = np.ones((self.height, self.width), bool)
        elif self._cov.any():
            self._close_pinholes()
            coverage = np.ones((self.height, self.width), bool)
        else:
            coverage = np.zeros((self.height, self.width), bool)
        return out, coverage

    def synthesize(self, eye, rotation=None, workers: int | None = None) -> ImageGray:
        out, _ = self.synthesize_raw(eye, rotation, workers)
        return ImageGray(np.clip(out.astype(np.float64), 0.0, 1.0))


def synthesize(bundle, eye, rotation=None, workers: int = 1) -> ImageGray:
    """One-shot novel view; build a SceneRenderer for repeated calls."""
    return SceneRenderer(bundle, workers=workers).synthesize(eye, rotation)


def benchmark_path(head: HeadVolume, n_frames: int) -> np.ndarray:
    """Deterministic eye path: a circle in the z=0 head-volume plane, then a
    dolly to 90% of the far head-volume depth."""
    eyes = np.zeros((n_frames, 3))
    if n_frames == 0:
        return eyes
    rx = head.x_range[1]
    ry = head.y_range[1]
    z_far = head.z_range[0] * 0.9
    n_circle = (2 * n_frames) // 3
    for i in range(n_circle):
        t = 2.0 * np.pi * i / max(1, n_circle)
        eyes[i] = (rx * np.cos(t), ry * np.sin(t), 0.0)
    n_dolly = n_frames - n_circle
    for j in range(n_dolly):
        s = j / max(1, n_dolly - 1) if n_dolly > 1 else 1.0
        eyes[n_circle + j] = (0.0, 0.0, z_far * s)
    return eyes


def benchmark(bundle, n_frames: int, out_dir=None, workers: int = 1,
              warmup: int = 1) -> TimingReport:
    """Wall-clock per-frame timing along the deterministic benchmark path;
    optionally writes the frames as numbered PNGs to ``out_dir``."""
    if n_frames <= 0:
        return TimingReport.from_times([])
    renderer = SceneRenderer(bundle, workers=workers)
    eyes = benchmark_path(renderer.head, n_frames)
    for _ in range(max(0, warmup)):
        renderer.synthesize_raw(eyes[0])
    times = []
    frames = []
    for i in range(n_frames):
        t0 = time.perf_counter()
        out, _ = renderer.synthesize_raw(eyes[i])
        times.append((time.perf_counter() - t0) * 1000.0)
        if out_dir is not None:
            frames.append(np.clip(out * 255.0 + 0.5, 0, 255).astype(np.uint8))
    if out_dir is not None:
        from pathlib import Path

        from PIL import Image
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        for i, fr in enumerate(frames):
            Image.fromarray(fr, mode="L").save(d / f"frame_{i:04d}.png")
    return TimingReport.from_times(times)
