import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { loadBundle } from "../src/bundle.js";
import { blendWeights, clampEye, headVolumeOf } from "../src/geomath.js";
import { diskFetcher, FIXTURES } from "./helpers.js";

describe("blend weights and clamping", () => {
  it("matches the offline weighting scheme", () => {
    expect(blendWeights(0, 0, 1, 1)).toEqual([1, 0, 0, 0, 0]);
    expect(blendWeights(1, 1, 1, 1)[2]).toBe(1);
    expect(blendWeights(-1, -1, 1, 1)[3]).toBe(1);
    const w = blendWeights(0.25, 0.25, 1, 1);
    expect(w[0]).toBeCloseTo(0.5625, 12);
    expect(w[2]).toBeCloseTo(0.0625, 12);
    expect(w[1]).toBe(0);
    expect(w[3]).toBe(0);
    expect(w[4]).toBe(0);
  });

  it("degenerate rig puts all weight on the reference", () => {
    expect(blendWeights(0.5, -0.5, 0, 0)).toEqual([1, 0, 0, 0, 0]);
  });

  it("clamps the eye to the manifest head volume exactly", async () => {
    const bundle = await loadBundle(diskFetcher(join(FIXTURES, "bundle")));
    const hv = headVolumeOf(bundle.manifest);
    const rw = bundle.manifest.rig.r_w;
    const rh = bundle.manifest.rig.r_h;
    // the head volume is [-r_w/4, r_w/4] x [-r_h/4, r_h/4] x [-1.5 r_w, 0]
    expect(hv.x[1]).toBeCloseTo(rw / 4, 12);
    expect(hv.y[0]).toBeCloseTo(-rh / 4, 12);
    expect(hv.z[0]).toBeCloseTo(-1.5 * rw, 12);
    expect(clampEye([99, -99, 99], hv)).toEqual([hv.x[1], hv.y[0], hv.z[1]]);
    expect(clampEye([0, 0, -1e9], hv)[2]).toBe(hv.z[0]);
  });

  it("drag-to-boundary lands exactly on the clamp bound", async () => {
    const bundle = await loadBundle(diskFetcher(join(FIXTURES, "bundle")));
    const hv = headVolumeOf(bundle.manifest);
    // a full-canvas drag maps linearly onto the x range; anything beyond
    // pins to the boundary
    const fullDrag = hv.x[1] - hv.x[0];
    const eye = clampEye([0 + fullDrag, 0, 0], hv);
    expect(eye[0]).toBe(hv.x[1]);
  });
});
