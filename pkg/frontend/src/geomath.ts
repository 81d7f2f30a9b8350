// Shared view math: eye clamping and blend weights must match the offline
// renderer exactly so viewer screenshots are comparable to CLI renders.

import type { Manifest } from "./bundle.js";

export type Vec3 = [number, number, number];

export interface HeadVolume {
  x: [number, number];
  y: [number, number];
  z: [number, number];
}

export function headVolumeOf(manifest: Manifest): HeadVolume {
  const hv = manifest.head_volume;
  return {
    x: [hv.x[0], hv.x[1]],
    y: [hv.y[0], hv.y[1]],
    z: [hv.z[0], hv.z[1]],
  };
}

const clamp = (v: number, lo: number, hi: number) =>
  Math.min(hi, Math.max(lo, v));

export function clampEye(eye: Vec3, hv: HeadVolume): Vec3 {
  return [
    clamp(eye[0], hv.x[0], hv.x[1]),
    clamp(eye[1], hv.y[0], hv.y[1]),
    clamp(eye[2], hv.z[0], hv.z[1]),
  ];
}

/** Raw blend weights for (v0, v1..v4); the compositor renormalizes over the
 * meshes that actually contribute at a pixel. Mirrors the offline renderer:
 * v0 takes (1-|x|/r_w)(1-|y|/r_h), each corner takes the product of its
 * quadrant's normalized offsets. Corner order: (-,+), (+,+), (-,-), (+,-). */
export function blendWeights(x: number, y: number, rw: number, rh: number):
    [number, number, number, number, number] {
  const nx = rw > 0 ? clamp(x / rw, -1, 1) : 0;
  const ny = rh > 0 ? clamp(y / rh, -1, 1) : 0;
  const px = Math.max(nx, 0);
  const mx = Math.max(-nx, 0);
  const py = Math.max(ny, 0);
  const my = Math.max(-ny, 0);
  return [
    (1 - Math.abs(nx)) * (1 - Math.abs(ny)),
    mx * py,
    px * py,
    mx * my,
    px * my,
  ];
}

/** Rotate a world offset into camera coordinates: columns of `rot` (row-major
 * flat 9) are the camera axes, so this applies the transpose. */
export function worldToCamera(rot: number[], dx: number, dy: number, dz: number): Vec3 {
  return [
    rot[0] * dx + rot[3] * dy + rot[6] * dz,
    rot[1] * dx + rot[4] * dy + rot[7] * dz,
    rot[2] * dx + rot[5] * dy + rot[8] * dz,
  ];
}
