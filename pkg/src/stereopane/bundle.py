"""On-disk scene bundle format plus stage sidecar files.

A bundle directory holds manifest.json plus five 8-bit intensity PNGs and
five 16-bit normalized-inverse-depth PNGs (inverse depth quantizes uniformly,
matching parallax precision). The manifest stores the rig, the head volume,
per-image inverse-depth ranges and a SHA-256 checksum per raster file; it is
written byte-stably (sorted keys, floats at 17 significant digits) so saving
the same bundle twice yields identical bytes. This format is the wire
contract with the browser viewer; any change bumps schema_version.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .core import (
    CameraView,
    GrayDepthImage,
    ImageGray,
    NormalizedInverseDepth,
    StereopaneError,
    denormalize,
    make_gd,
    normalize_inverse_depth,
)
from .disparity import DisparityMap
from .geometry import TRIANGLE_DEPTH_THRESHOLD, QuadRig
from .rectify import RectifiedPair
from .viewsynth import DEPTH_BLEND_TOLERANCE, HeadVolume

SCHEMA_VERSION = 1
DISPARITY_FIXED_POINT = 64  # 16-bit disparity files store 1/64 px units


@dataclass(frozen=True)
class SceneBundle:
    """Five hole-free gray+depth images, their rig, and the head volume."""

    rig: QuadRig
    head: HeadVolume
    gds: tuple[GrayDepthImage, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.gds) != 5:
            raise StereopaneError("a bundle holds exactly five images")
        shape = self.gds[0].shape
        for gd in self.gds:
            if gd.shape != shape:
                raise StereopaneError("bundle images must share dimensions")
            if gd.hole_count():
                raise StereopaneError("bundle images must be hole-free")
        expect = HeadVolume.from_rig(self.rig.r_w, self.rig.r_h)
        if expect != self.head:
            raise StereopaneError("head volume must derive from the rig")
        object.__setattr__(self, "gds", tuple(self.gds))

    @property
    def shape(self) -> tuple[int, int]:
        return self.gds[0].shape


def make_bundle(rig: QuadRig, gds, provenance=None) -> SceneBundle:
    return SceneBundle(rig=rig, head=HeadVolume.from_rig(rig.r_w, rig.r_h),
                       gds=tuple(gds), provenance=provenance or {})


def _fmt(value) -> str:
    """Canonical JSON: sorted keys, floats at 17 significant digits."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not np.isfinite(v):
            raise StereopaneError("manifests cannot store non-finite numbers")
        return format(v, ".17g")
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=True)
    if value is None:
        return "null"
    if isinstance(value, (list, tuple, np.ndarray)):
        items = ",".join(_fmt(v) for v in value)
        return f"[{items}]"
    if isinstance(value, dict):
        items = ",".join(f"{json.dumps(str(k))}:{_fmt(v)}"
                         for k, v in sorted(value.items()))
        return "{" + items + "}"
    raise StereopaneError(f"cannot serialize {type(value).__name__}")


def write_manifest(path: Path, manifest: dict) -> None:
    path.write_text(_fmt(manifest) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_png8(path: Path, data01: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(data01) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def save_png16(path: Path, data01: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(data01) * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(arr).save(path)


def load_png_gray(path: Path) -> np.ndarray:
    """Load an 8- or 16-bit grayscale PNG into floats in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[..., 0]
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64) / 65535.0


def _camera_to_dict(cam: CameraView) -> dict:
    return {
        "position": list(cam.position),
        "rotation": list(cam.rotation.reshape(-1)),
        "focal": cam.focal,
        "principal": list(cam.principal),
        "width": cam.width,
        "height": cam.height,
    }


def _camera_from_dict(d: dict) -> CameraView:
    return CameraView(
        position=np.array(d["position"], np.float64),
        rotation=np.array(d["rotation"], np.float64).reshape(3, 3),
        focal=float(d["focal"]),
        principal=np.array(d["principal"], np.float64),
        width=int(d["width"]),
        height=int(d["height"]),
    )


def save(bundle: SceneBundle, directory) -> None:
    """Write a bundle directory: manifest + five intensity/nid PNG pairs,
    plus any auxiliary hole-mask rasters carried in the provenance."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    gd_entries = []
    for i, gd in enumerate(bundle.gds):
        nid = normalize_inverse_depth(gd.depth)
        ifile = f"gd{i}_intensity.png"
        nfile = f"gd{i}_nid.png"
        save_png8(d / ifile, gd.intensity.data)
        save_png16(d / nfile, nid.data)
        gd_entries.append({
            "intensity": ifile,
            "nid": nfile,
            "d_min": nid.d_min,
            "d_max_inv": nid.d_max_inv,
            "degenerate": nid.degenerate,
            "sha256_intensity": _sha256(d / ifile),
            "sha256_nid": _sha256(d / nfile),
        })

    aux = {}
    hole_masks = bundle.provenance.get("hole_masks")
    if hole_masks is not None:
        entries = []
        for i, mask in enumerate(hole_masks):
            if mask is None:
                entries.append(None)
                continue
            mfile = f"gd{i}_holes.png"
            save_png8(d / mfile, np.asarray(mask, np.float64))
            entries.append({"file": mfile, "sha256": _sha256(d / mfile)})
        aux["hole_masks"] = entries

    provenance = {k: v for k, v in bundle.provenance.items() if k != "hole_masks"}
    provenance.setdefault("pipeline_version", __version__)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "provenance": provenance,
        "rig": {
            "center": list(bundle.rig.center),
            "r_w": bundle.rig.r_w,
            "r_h": bundle.rig.r_h,
            "up": list(bundle.rig.up),
            "views": [_camera_to_dict(v) for v in bundle.rig.views],
        },
        "head_volume": bundle.head.as_dict(),
        "render_params": {
            "triangle_threshold": TRIANGLE_DEPTH_THRESHOLD,
            "depth_tolerance": DEPTH_BLEND_TOLERANCE,
        },
        "gds": gd_entries,
        "aux": aux,
    }
    write_manifest(d / "manifest.json", manifest)


def load(directory) -> SceneBundle:
    """Load and verify a bundle directory; checksum or schema mismatches
    raise instead of returning corrupt data."""
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.is_file():
        raise StereopaneError("manifest.json is missing")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise StereopaneError("unknown bundle schema version")
    rig_d = manifest["rig"]
    views = [_camera_from_dict(v) for v in rig_d["views"]]
    rig = QuadRig(center=np.array(rig_d["center"]), r_w=float(rig_d["r_w"]),
                  r_h=float(rig_d["r_h"]), views=tuple(views),
                  up=np.array(rig_d["up"]))
    gds = []
    if len(manifest["gds"]) != 5:
        raise StereopaneError("a bundle holds exactly five images")
    for entry in manifest["gds"]:
        for file_key, sum_key in (("intensity", "sha256_intensity"),
                                  ("nid", "sha256_nid")):
            p = d / entry[file_key]
            if not p.is_file():
                raise StereopaneError(f"corrupt bundle: missing {entry[file_key]}")
            if _sha256(p) != entry[sum_key]:
                raise StereopaneError("corrupt bundle: checksum mismatch")
        intensity = load_png_gray(d / entry["intensity"])
        nid_data = load_png_gray(d / entry["nid"])
        shape = nid_data.shape
        nid = NormalizedInverseDepth(nid_data, np.ones(shape, bool),
                                     float(entry["d_min"]),
                                     float(entry["d_max_inv"]),
                                     bool(entry["degenerate"]))
        depth = denormalize(nid)
        gds.append(make_gd(intensity, depth.data, np.ones(shape, bool)))

    provenance = dict(manifest.get("provenance", {}))
    aux = manifest.get("aux", {})
    masks = aux.get("hole_masks")
    if masks is not None:
        loaded = []
        for entry in masks:
            if entry is None:
                loaded.append(None)
                continue
            p = d / entry["file"]
            if not p.is_file() or _sha256(p) != entry["sha256"]:
                raise StereopaneError("corrupt bundle: checksum mismatch")
            loaded.append(load_png_gray(p) > 0.5)
        provenance["hole_masks"] = loaded
    return SceneBundle(rig=rig, head=HeadVolume.from_rig(rig.r_w, rig.r_h),
                       gds=tuple(gds), provenance=provenance)


# --- stage sidecar files -------------------------------------------------

def save_rectified(directory, pair: RectifiedPair) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_png16(d / "rect_left.png", pair.left.data)
    save_png16(d / "rect_right.png", pair.right.data)
    save_png8(d / "rect_left_mask.png", pair.left_valid.astype(np.float64))
    save_png8(d / "rect_right_mask.png", pair.right_valid.astype(np.float64))
    write_manifest(d / "rect_meta.json", {
        "h_left": list(pair.h_left.reshape(-1)),
        "h_right": list(pair.h_right.reshape(-1)),
        "focal": pair.focal,
        "baseline": pair.baseline,
        "disparity_offset": pair.disparity_offset,
        "matches": [list(row) for row in pair.matches],
    })


def load_rectified(directory) -> RectifiedPair:
    d = Path(directory)
    meta = json.loads((d / "rect_meta.json").read_text(encoding="utf-8"))
    matches = np.array(meta["matches"], np.float64).reshape(-1, 4)
    return RectifiedPair(
        left=ImageGray(load_png_gray(d / "rect_left.png")),
        right=ImageGray(load_png_gray(d / "rect_right.png")),
        left_valid=load_png_gray(d / "rect_left_mask.png") > 0.5,
        right_valid=load_png_gray(d / "rect_right_mask.png") > 0.5,
        h_left=np.array(meta["h_left"]).reshape(3, 3),
        h_right=np.array(meta["h_right"]).reshape(3, 3),
        focal=float(meta["focal"]),
        baseline=float(meta["baseline"]),
        disparity_offset=float(meta["disparity_offset"]),
        matches=matches,
    )


def save_disparity(directory, disp: DisparityMap) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    fixed = np.clip(np.round(disp.data * DISPARITY_FIXED_POINT), 0,
                    65535).astype(np.uint16)
    Image.fromarray(fixed).save(d / "disp.png")
    save_png8(d / "disp_mask.png", disp.valid.astype(np.float64))
    write_manifest(d / "disp_meta.json", {
        "fixed_point": DISPARITY_FIXED_POINT,
        "d_max": disp.d_max,
    })


def load_disparity(directory) -> DisparityMap:
    d = Path(directory)
    meta = json.loads((d / "disp_meta.json").read_text(encoding="utf-8"))
    with Image.open(d / "disp.png") as img:
        fixed = np.asarray(img).astype(np.float64)
    data = fixed / float(meta["fixed_point"])
    valid = load_png_gray(d / "disp_mask.png") > 0.5
    return DisparityMap(data, valid)


def save_gd(directory, prefix: str, gd: GrayDepthImage) -> None:
    """Persist one gray+depth image (with holes) as sidecar rasters."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    nid = normalize_inverse_depth(gd.depth)
    save_png8(d / f"{prefix}_intensity.png", gd.intensity.data)
    save_png16(d / f"{prefix}_nid.png", np.where(gd.valid, nid.data, 0.0))
    save_png8(d / f"{prefix}_mask.png", gd.valid.astype(np.float64))
    write_manifest(d / f"{prefix}_meta.json", {
        "d_min": nid.d_min, "d_max_inv": nid.d_max_inv,
        "degenerate": nid.degenerate,
    })


def load_gd(directory, prefix: str) -> GrayDepthImage:
    d = Path(directory)
    meta = json.loads((d / f"{prefix}_meta.json").read_text(encoding="utf-8"))
    intensity = load_png_gray(d / f"{prefix}_intensity.png")
    nid_data = load_png_gray(d / f"{prefix}_nid.png")
    valid = load_png_gray(d / f"{prefix}_mask.png") > 0.5
    nid = NormalizedInverseDepth(np.where(valid, nid_data, 0.0), valid,
                                 float(meta["d_min"]), float(meta["d_max_inv"]),
                                 bool(meta["degenerate"]))
    return GrayDepthImage(ImageGray(intensity), denormalize(nid), valid)
