import { readFile } from "node:fs/promises";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { bannerMessageFor, BundleError, loadBundle } from "../src/bundle.js";
import { diskFetcher, FIXTURES } from "./helpers.js";

const BUNDLE_DIR = join(FIXTURES, "bundle");

describe("bundle loader", () => {
  it("loads five rasters with reconstructed depth", async () => {
    const bundle = await loadBundle(diskFetcher(BUNDLE_DIR));
    expect(bundle.gds).toHaveLength(5);
    expect(bundle.manifest.rig.views).toHaveLength(5);
    const gd = bundle.gds[0];
    expect(gd.width).toBe(bundle.manifest.rig.views[0].width);
    const entry = bundle.manifest.gds[0];
    let dmin = Infinity;
    let dmax = -Infinity;
    for (const d of gd.depth) {
      dmin = Math.min(dmin, d);
      dmax = Math.max(dmax, d);
    }
    // depth range must invert the stored inverse-depth range
    expect(dmin).toBeCloseTo(1 / entry.d_max_inv, 6);
    expect(dmax).toBeCloseTo(1 / entry.d_min, 6);
  });

  it("rejects a tampered raster with a checksum error", async () => {
    const manifest = JSON.parse(await readFile(join(BUNDLE_DIR, "manifest.json"), "utf-8"));
    const victim = manifest.gds[1].nid as string;
    const raw = new Uint8Array(await readFile(join(BUNDLE_DIR, victim)));
    raw[raw.length - 16] ^= 0xff;
    const fetcher = diskFetcher(BUNDLE_DIR, { [victim]: raw });
    await expect(loadBundle(fetcher)).rejects.toThrow(/checksum/);
  });

  it("rejects an unknown schema version", async () => {
    const manifest = JSON.parse(await readFile(join(BUNDLE_DIR, "manifest.json"), "utf-8"));
    manifest.schema_version = 99;
    const fetcher = diskFetcher(BUNDLE_DIR, {
      "manifest.json": new TextEncoder().encode(JSON.stringify(manifest)),
    });
    await expect(loadBundle(fetcher)).rejects.toThrow(/schema/);
  });

  it("rejects a missing raster", async () => {
    const fetcher = diskFetcher(BUNDLE_DIR, {
      "gd3_intensity.png": () => { throw new BundleError("fetch gd3_intensity.png: missing"); },
    });
    await expect(loadBundle(fetcher)).rejects.toThrow(BundleError);
  });

  it("produces a user-facing banner message, not a crash", async () => {
    try {
      await loadBundle(diskFetcher(join(FIXTURES, "nope")));
      expect.unreachable("load should fail");
    } catch (err) {
      const msg = bannerMessageFor(err);
      expect(msg).toMatch(/Could not load scene/);
    }
  });
});
