// Scene-bundle wire format: manifest.json plus PNG rasters, checksummed.
// Mirrors the pipeline's on-disk schema (schema_version 1).

import { decodeGrayPng } from "./png.js";

export class BundleError extends Error {}

export interface CameraJson {
  position: number[];
  rotation: number[]; // 3x3 row-major
  focal: number;
  principal: number[];
  width: number;
  height: number;
}

export interface ManifestGd {
  intensity: string;
  nid: string;
  d_min: number;
  d_max_inv: number;
  degenerate: boolean;
  sha256_intensity: string;
  sha256_nid: string;
}

export interface Manifest {
  schema_version: number;
  rig: {
    center: number[];
    r_w: number;
    r_h: number;
    up: number[];
    views: CameraJson[];
  };
  head_volume: { x: number[]; y: number[]; z: number[] };
  render_params: { triangle_threshold: number; depth_tolerance: number };
  gds: ManifestGd[];
  provenance?: Record<string, unknown>;
}

export interface GdRaster {
  width: number;
  height: number;
  intensity: Float32Array;
  /** Scene-unit depth reconstructed from the stored inverse-depth range. */
  depth: Float64Array;
}

export interface LoadedBundle {
  manifest: Manifest;
  gds: GdRaster[];
}

export type Fetcher = (path: string) => Promise<Uint8Array>;

export function httpFetcher(baseUrl: string): Fetcher {
  const base = baseUrl.endsWith("/") ? baseUrl : baseUrl + "/";
  return async (path: string) => {
    const resp = await fetch(base + path);
    if (!resp.ok) throw new BundleError(`fetch ${path}: HTTP ${resp.status}`);
    return new Uint8Array(await resp.arrayBuffer());
  };
}

async function sha256hex(bytes: Uint8Array): Promise<string> {
  const digest = await crypto.subtle.digest(
    "SHA-256", bytes.slice().buffer as ArrayBuffer);
  return [...new Uint8Array(digest)]
    .map((b) => b.toString(16).padStart(2, "0"))
    .join("");
}

function depthFromNid(nid: Float32Array, dMin: number, dMaxInv: number): Float64Array {
  const out = new Float64Array(nid.length);
  const span = dMaxInv - dMin;
  for (let i = 0; i < nid.length; i++) {
    out[i] = 1.0 / (dMin + nid[i] * span);
  }
  return out;
}

/** Fetch, verify and decode a bundle. Any checksum or schema mismatch
 * raises BundleError rather than returning corrupt data. */
export async function loadBundle(fetchBytes: Fetcher): Promise<LoadedBundle> {
  let manifest: Manifest;
  try {
    const raw = await fetchBytes("manifest.json");
    manifest = JSON.parse(new TextDecoder().decode(raw)) as Manifest;
  } catch (e) {
    if (e instanceof BundleError) throw e;
    throw new BundleError(`manifest unreadable: ${(e as Error).message}`);
  }
  if (manifest.schema_version !== 1) {
    throw new BundleError(
      `unsupported bundle schema version ${manifest.schema_version}`);
  }
  if (!Array.isArray(manifest.gds) || manifest.gds.length !== 5) {
    throw new BundleError("a bundle holds exactly five images");
  }
  const gds: GdRaster[] = [];
  for (const entry of manifest.gds) {
    const rawI = await fetchBytes(entry.intensity);
    if ((await sha256hex(rawI)) !== entry.sha256_intensity) {
      throw new BundleError(`corrupt bundle: checksum mismatch on ${entry.intensity}`);
    }
    const rawN = await fetchBytes(entry.nid);
    if ((await sha256hex(rawN)) !== entry.sha256_nid) {
      throw new BundleError(`corrupt bundle: checksum mismatch on ${entry.nid}`);
    }
    const imgI = await decodeGrayPng(rawI);
    const imgN = await decodeGrayPng(rawN);
    if (imgI.width !== imgN.width || imgI.height !== imgN.height) {
      throw new BundleError("corrupt bundle: raster dimensions differ");
    }
    gds.push({
      width: imgI.width,
      height: imgI.height,
      intensity: imgI.data,
      depth: depthFromNid(imgN.data, entry.d_min, entry.d_max_inv),
    });
  }
  return { manifest, gds };
}

export function bannerMessageFor(err: unknown): string {
  if (err instanceof BundleError) {
    return `Could not load scene: ${err.message}`;
  }
  return `Could not load scene: ${(err as Error)?.message ?? String(err)}`;
}
