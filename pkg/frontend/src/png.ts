// Minimal PNG reader for the bundle rasters: non-interlaced grayscale at
// 8 or 16 bits. Browsers only expose 8-bit pixels through canvas, and the
// depth channel is quantized to 16 bits, so the files are parsed directly
// (zlib inflate via DecompressionStream, then scanline unfiltering).

export interface GrayImage {
  width: number;
  height: number;
  /** Values normalized to [0, 1]. */
  data: Float32Array;
  bitDepth: 8 | 16;
}

const PNG_SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

function u32(bytes: Uint8Array, off: number): number {
  return (
    ((bytes[off] << 24) >>> 0) +
    (bytes[off + 1] << 16) +
    (bytes[off + 2] << 8) +
    bytes[off + 3]
  );
}

async function inflate(zlibData: Uint8Array): Promise<Uint8Array> {
  const ds = new DecompressionStream("deflate");
  const stream = new Blob([zlibData as BlobPart]).stream().pipeThrough(ds);
  const buf = await new Response(stream).arrayBuffer();
  return new Uint8Array(buf);
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

function unfilter(raw: Uint8Array, width: number, height: number, bpp: number): Uint8Array {
  const stride = width * bpp;
  const out = new Uint8Array(stride * height);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const src = y * (stride + 1) + 1;
    const dst = y * stride;
    for (let x = 0; x < stride; x++) {
      const cur = raw[src + x];
      const left = x >= bpp ? out[dst + x - bpp] : 0;
      const up = y > 0 ? out[dst + x - stride] : 0;
      const ul = y > 0 && x >= bpp ? out[dst + x - bpp - stride] : 0;
      let v: number;
      switch (filter) {
        case 0: v = cur; break;
        case 1: v = cur + left; break;
        case 2: v = cur + up; break;
        case 3: v = cur + ((left + up) >> 1); break;
        case 4: v = cur + paeth(left, up, ul); break;
        default: throw new Error(`png: unknown filter ${filter}`);
      }
      out[dst + x] = v & 0xff;
    }
  }
  return out;
}

/** Decode a grayscale (color type 0) PNG at 8 or 16 bits. */
export async function decodeGrayPng(bytes: Uint8Array): Promise<GrayImage> {
  for (let i = 0; i < 8; i++) {
    if (bytes[i] !== PNG_SIGNATURE[i]) throw new Error("png: bad signature");
  }
  let width = 0;
  let height = 0;
  let bitDepth = 0;
  let colorType = -1;
  const idat: Uint8Array[] = [];
  let off = 8;
  while (off + 8 <= bytes.length) {
    const len = u32(bytes, off);
    const type = String.fromCharCode(
      bytes[off + 4], bytes[off + 5], bytes[off + 6], bytes[off + 7]);
    const body = bytes.subarray(off + 8, off + 8 + len);
    if (type === "IHDR") {
      width = u32(body, 0);
      height = u32(body, 4);
      bitDepth = body[8];
      colorType = body[9];
      if (body[12] !== 0) throw new Error("png: interlaced images unsupported");
    } else if (type === "IDAT") {
      idat.push(body);
    } else if (type === "IEND") {
      break;
    }
    off += 12 + len;
  }
  if (colorType !== 0 || (bitDepth !== 8 && bitDepth !== 16)) {
    throw new Error(`png: expected 8/16-bit grayscale, got type ${colorType} depth ${bitDepth}`);
  }
  const zall = new Uint8Array(idat.reduce((n, c) => n + c.length, 0));
  let zo = 0;
  for (const c of idat) {
    zall.set(c, zo);
    zo += c.length;
  }
  const bpp = bitDepth / 8;
  const raw = await inflate(zall);
  if (raw.length < height * (width * bpp + 1)) {
    throw new Error("png: truncated pixel data");
  }
  const pix = unfilter(raw, width, height, bpp);
  const data = new Float32Array(width * height);
  if (bitDepth === 8) {
    for (let i = 0; i < data.length; i++) data[i] = pix[i] / 255;
  } else {
    for (let i = 0; i < data.length; i++) {
      data[i] = ((pix[2 * i] << 8) | pix[2 * i + 1]) / 65535;
    }
  }
  return { width, height, data, bitDepth: bitDepth as 8 | 16 };
}
