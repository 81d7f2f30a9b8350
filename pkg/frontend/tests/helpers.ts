import { readFile } from "node:fs/promises";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { BundleError, Fetcher } from "../src/bundle.js";

export const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), "fixtures");

export async function readFixture(...parts: string[]): Promise<Uint8Array> {
  return new Uint8Array(await readFile(join(FIXTURES, ...parts)));
}

/** Fetcher over the on-disk fixture bundle, with optional per-file overrides
 * to simulate corruption. */
export function diskFetcher(
  dir: string,
  overrides: Record<string, Uint8Array | (() => Uint8Array)> = {},
): Fetcher {
  return async (path: string) => {
    const hit = overrides[path];
    if (hit !== undefined) {
      return typeof hit === "function" ? hit() : hit;
    }
    try {
      return new Uint8Array(await readFile(join(dir, path)));
    } catch (e) {
      throw new BundleError(`fetch ${path}: ${(e as Error).message}`);
    }
  };
}
