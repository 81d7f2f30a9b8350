// CPU reference compositor. This is the same algorithm the WebGL path
// implements with shaders (per-mesh z-buffers, depth-tolerant weighted
// blending, residual row fill), kept in plain TypeScript so headless tests
// can compare viewer output against offline CLI renders pixel for pixel.

import type { LoadedBundle } from "./bundle.js";
import { blendWeights, clampEye, headVolumeOf, worldToCamera, Vec3 } from "./geomath.js";
import { buildMesh, ViewMesh } from "./mesh.js";

const INSIDE_EPS = 1e-4;

interface MeshBuffers {
  iz: Float32Array;
  ib: Float32Array;
}

function rasterizeMesh(
  mesh: ViewMesh, eye: Vec3, rotation: number[], focal: number,
  cx: number, cy: number, w: number, h: number, buf: MeshBuffers,
): void {
  buf.iz.fill(0);
  const n = mesh.positions.length / 3;
  const sx = new Float32Array(n);
  const sy = new Float32Array(n);
  const viz = new Float32Array(n);
  const vioz = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    const cvec = worldToCamera(
      rotation,
      mesh.positions[3 * i] - eye[0],
      mesh.positions[3 * i + 1] - eye[1],
      mesh.positions[3 * i + 2] - eye[2],
    );
    const depth = -cvec[2];
    if (depth <= 1e-9) {
      viz[i] = 0;
      continue;
    }
    const inv = 1 / depth;
    sx[i] = Math.fround(cx + focal * cvec[0] * inv);
    sy[i] = Math.fround(cy - focal * cvec[1] * inv);
    viz[i] = Math.fround(inv);
    vioz[i] = Math.fround(mesh.intensities[i] * inv);
  }
  const idx = mesh.indices;
  for (let t = 0; t < idx.length; t += 3) {
    const i0 = idx[t];
    const i1 = idx[t + 1];
    const i2 = idx[t + 2];
    const z0 = viz[i0];
    const z1 = viz[i1];
    const z2 = viz[i2];
    if (z0 <= 0 || z1 <= 0 || z2 <= 0) continue;
    const x0 = sx[i0], y0 = sy[i0];
    const x1 = sx[i1], y1 = sy[i1];
    const x2 = sx[i2], y2 = sy[i2];
    const ymin = Math.min(y0, y1, y2) - 1e-3;
    const ymax = Math.max(y0, y1, y2) + 1e-3;
    const xmin = Math.min(x0, x1, x2) - 1e-3;
    const xmax = Math.max(x0, x1, x2) + 1e-3;
    const py0 = Math.max(0, Math.ceil(ymin));
    const py1 = Math.min(h - 1, Math.floor(ymax));
    const px0 = Math.max(0, Math.ceil(xmin));
    const px1 = Math.min(w - 1, Math.floor(xmax));
    if (py1 < py0 || px1 < px0) continue;
    const den = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0);
    if (den === 0) continue;
    const inv = 1 / den;
    for (let py = py0; py <= py1; py++) {
      for (let px = px0; px <= px1; px++) {
        const w1 = ((px - x0) * (y2 - y0) - (py - y0) * (x2 - x0)) * inv;
        const w2 = ((x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)) * inv;
        const w0 = 1 - w1 - w2;
        if (w0 >= -INSIDE_EPS && w1 >= -INSIDE_EPS && w2 >= -INSIDE_EPS) {
          const izi = w0 * z0 + w1 * z1 + w2 * z2;
          const p = py * w + px;
          if (izi > buf.iz[p]) {
            buf.iz[p] = izi;
            buf.ib[p] = w0 * vioz[i0] + w1 * vioz[i1] + w2 * vioz[i2];
          }
        }
      }
    }
  }
}

export class SoftRenderer {
  readonly width: number;
  readonly height: number;
  private meshes: ViewMesh[];
  private bufs: MeshBuffers[];
  private bundle: LoadedBundle;

  constructor(bundle: LoadedBundle) {
    this.bundle = bundle;
    const ref = bundle.manifest.rig.views[0];
    this.width = ref.width;
    this.height = ref.height;
    const threshold = bundle.manifest.render_params.triangle_threshold;
    this.meshes = bundle.gds.map((gd, i) =>
      buildMesh(gd, bundle.manifest.rig.views[i], threshold));
    const n = this.width * this.height;
    this.bufs = this.meshes.map(() => ({
      iz: new Float32Array(n),
      ib: new Float32Array(n),
    }));
  }

  /** Render a mono view; mirrors the offline synthesize contract. */
  render(eyeIn: Vec3): Float32Array {
    const m = this.bundle.manifest;
    const eye = clampEye(eyeIn, headVolumeOf(m));
    const ref = m.rig.views[0];
    const identity = [1, 0, 0, 0, 1, 0, 0, 0, 1];
    for (let i = 0; i < this.meshes.length; i++) {
      rasterizeMesh(this.meshes[i], eye, identity, ref.focal,
                    ref.principal[0], ref.principal[1],
                    this.width, this.height, this.bufs[i]);
    }
    const weights = blendWeights(eye[0], eye[1], m.rig.r_w, m.rig.r_h);
    const tol = m.render_params.depth_tolerance;
    const n = this.width * this.height;
    const out = new Float32Array(n);
    const covered = new Uint8Array(n);
    for (let p = 0; p < n; p++) {
      let best = 0;
      for (let i = 0; i < 5; i++) {
        if (weights[i] > 0 && this.bufs[i].iz[p] > best) best = this.bufs[i].iz[p];
      }
      if (best > 0) {
        const cut = best / (1 + tol);
        let wsum = 0;
        let acc = 0;
        for (let i = 0; i < 5; i++) {
          const zi = this.bufs[i].iz[p];
          if (weights[i] > 0 && zi >= cut) {
            wsum += weights[i];
            acc += weights[i] * (this.bufs[i].ib[p] / zi);
          }
        }
        out[p] = acc / wsum;
        covered[p] = 1;
        continue;
      }
      for (let i = 0; i < 5; i++) {
        if (this.bufs[i].iz[p] > best) best = this.bufs[i].iz[p];
      }
      if (best > 0) {
        covered[p] = 1;
        for (let i = 0; i < 5; i++) {
          if (this.bufs[i].iz[p] === best) {
            out[p] = this.bufs[i].ib[p] / best;
            break;
          }
        }
      }
    }
    this.fillRows(out, covered);
    for (let p = 0; p < n; p++) out[p] = Math.min(1, Math.max(0, out[p]));
    return out;
  }

  private fillRows(out: Float32Array, covered: Uint8Array): void {
    const { width: w, height: h } = this;
    for (let y = 0; y < h; y++) {
      const row = y * w;
      let any = false;
      for (let x = 0; x < w; x++) {
        if (covered[row + x]) { any = true; break; }
      }
      if (!any) continue;
      let left = -1;
      let right = -1;
      for (let x = 0; x < w; x++) {
        if (covered[row + x]) { left = x; continue; }
        if (right <= x) {
          right = w;
          for (let k = x + 1; k < w; k++) {
            if (covered[row + k]) { right = k; break; }
          }
        }
        if (left === -1) out[row + x] = out[row + right];
        else if (right >= w) out[row + x] = out[row + left];
        else out[row + x] = x - left <= right - x ? out[row + left] : out[row + right];
      }
    }
  }
}
