// Client-side depth meshing: the same lift as the pipeline (one vertex per
// pixel, two triangles per 2x2 block, triangles straddling a relative depth
// difference above the manifest threshold are dropped), so the GPU draws the
// same geometry the offline renderer rasterized.

import type { CameraJson, GdRaster } from "./bundle.js";

export interface ViewMesh {
  /** xyz world positions, 3 floats per vertex */
  positions: Float32Array;
  /** one intensity per vertex */
  intensities: Float32Array;
  indices: Uint32Array;
  triangleCount: number;
}

export function buildMesh(gd: GdRaster, cam: CameraJson, threshold: number): ViewMesh {
  const { width: w, height: h, depth, intensity } = gd;
  const positions = new Float32Array(w * h * 3);
  const [cx, cy] = cam.principal;
  const f = cam.focal;
  const r = cam.rotation;
  const [px0, py0, pz0] = cam.position;
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const i = y * w + x;
      const d = depth[i];
      const xc = ((x - cx) * d) / f;
      const yc = (-(y - cy) * d) / f;
      const zc = -d;
      // world = position + R * local (columns of R are the camera axes)
      positions[3 * i] = px0 + r[0] * xc + r[1] * yc + r[2] * zc;
      positions[3 * i + 1] = py0 + r[3] * xc + r[4] * yc + r[5] * zc;
      positions[3 * i + 2] = pz0 + r[6] * xc + r[7] * yc + r[8] * zc;
    }
  }

  const pairOk = (a: number, b: number) =>
    Math.abs(a - b) <= threshold * Math.min(a, b);

  const idx: number[] = [];
  for (let y = 0; y < h - 1; y++) {
    for (let x = 0; x < w - 1; x++) {
      const a = y * w + x;
      const b = a + w;
      const c = a + 1;
      const d2 = b + 1;
      const da = depth[a];
      const db = depth[b];
      const dc = depth[c];
      const dd = depth[d2];
      const bc = pairOk(db, dc);
      if (bc && pairOk(da, db) && pairOk(da, dc)) {
        idx.push(a, b, c);
      }
      if (bc && pairOk(db, dd) && pairOk(dc, dd)) {
        idx.push(c, b, d2);
      }
    }
  }
  return {
    positions,
    intensities: Float32Array.from(intensity),
    indices: Uint32Array.from(idx),
    triangleCount: idx.length / 3,
  };
}
