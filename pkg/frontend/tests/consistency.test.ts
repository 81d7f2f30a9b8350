// Cross-component check: the viewer's compositing (CPU reference path, the
// same math the shaders run) must reproduce the offline CLI render at a
// scripted eye within 2/255 mean absolute intensity difference.

import { readFile } from "node:fs/promises";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { loadBundle } from "../src/bundle.js";
import { decodeGrayPng } from "../src/png.js";
import { SoftRenderer } from "../src/softrender.js";
import { diskFetcher, FIXTURES, readFixture } from "./helpers.js";

describe("viewer / offline renderer consistency", () => {
  it("matches the CLI render at the scripted eye", async () => {
    const meta = JSON.parse(
      await readFile(join(FIXTURES, "render_meta.json"), "utf-8"));
    const expected = await decodeGrayPng(await readFixture("expected_render.png"));
    const bundle = await loadBundle(diskFetcher(join(FIXTURES, "bundle")));
    const renderer = new SoftRenderer(bundle);
    expect(renderer.width).toBe(meta.width);
    expect(renderer.height).toBe(meta.height);
    const got = renderer.render(meta.eye as [number, number, number]);
    let sum = 0;
    for (let i = 0; i < got.length; i++) {
      sum += Math.abs(got[i] - expected.data[i]);
    }
    const mad = sum / got.length;
    expect(mad).toBeLessThanOrEqual(meta.mean_tolerance);
  });

  it("clamps exactly like the offline renderer at the boundary", async () => {
    const bundle = await loadBundle(diskFetcher(join(FIXTURES, "bundle")));
    const renderer = new SoftRenderer(bundle);
    const hv = bundle.manifest.head_volume;
    const inside = renderer.render([hv.x[1], hv.y[0], hv.z[1]]);
    const outside = renderer.render([hv.x[1] * 50, hv.y[0] * 50, 99]);
    expect(outside).toEqual(inside);
  });
});
