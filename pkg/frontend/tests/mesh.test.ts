import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { loadBundle } from "../src/bundle.js";
import { buildMesh } from "../src/mesh.js";
import { diskFetcher, FIXTURES } from "./helpers.js";

function flatCamera(w: number, h: number, focal: number) {
  return {
    position: [0, 0, 0],
    rotation: [1, 0, 0, 0, 1, 0, 0, 0, 1],
    focal,
    principal: [(w - 1) / 2, (h - 1) / 2],
    width: w,
    height: h,
  };
}

describe("client-side meshing", () => {
  it("keeps both triangles per cell on a smooth surface", () => {
    const w = 4, h = 3;
    const gd = {
      width: w, height: h,
      intensity: new Float32Array(w * h).fill(0.5),
      depth: new Float64Array(w * h).fill(2.0),
    };
    const mesh = buildMesh(gd, flatCamera(w, h, 50), 0.1);
    expect(mesh.triangleCount).toBe((w - 1) * (h - 1) * 2);
  });

  it("drops triangles straddling a depth step", () => {
    const w = 3, h = 2;
    const depth = new Float64Array([1, 2, 2, 1, 2, 2]);
    const gd = {
      width: w, height: h,
      intensity: new Float32Array(w * h).fill(0.5),
      depth,
    };
    const mesh = buildMesh(gd, flatCamera(w, h, 50), 0.1);
    // only the right-hand constant cell survives
    expect(mesh.triangleCount).toBe(2);
    for (const idx of mesh.indices) {
      expect(idx % w).toBeGreaterThanOrEqual(1);
    }
  });

  it("back-projects vertices consistently with the camera", async () => {
    const bundle = await loadBundle(diskFetcher(join(FIXTURES, "bundle")));
    const cam = bundle.manifest.rig.views[0];
    const mesh = buildMesh(bundle.gds[0], cam,
      bundle.manifest.render_params.triangle_threshold);
    // project a few vertices back: u = cx + f*x/(-z), v = cy - f*y/(-z)
    const w = cam.width;
    for (const i of [0, 17, w + 3, mesh.positions.length / 3 - 1]) {
      const x = mesh.positions[3 * i];
      const y = mesh.positions[3 * i + 1];
      const z = mesh.positions[3 * i + 2];
      const u = cam.principal[0] + (cam.focal * x) / -z;
      const v = cam.principal[1] - (cam.focal * y) / -z;
      expect(u).toBeCloseTo(i % w, 3);
      expect(v).toBeCloseTo(Math.floor(i / w), 3);
    }
  });
});
