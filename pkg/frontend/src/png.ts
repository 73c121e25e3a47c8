// Minimal PNG decoder for the stimuli the study service serves: 8-bit
// grayscale (color type 0) or RGB (color type 2), non-interlaced. Decoding
// the pixels ourselves (instead of drawImage on an <img>) is what makes
// pixel-exact rendering and readback verifiable.

export interface RawImage {
  width: number;
  height: number;
  channels: 1 | 3;
  /** width * height * channels bytes, row-major. */
  pixels: Uint8Array;
}

export type Inflate = (data: Uint8Array) => Promise<Uint8Array>;

const PNG_SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

function u32(bytes: Uint8Array, off: number): number {
  return ((bytes[off] << 24) | (bytes[off + 1] << 16) | (bytes[off + 2] << 8) | bytes[off + 3]) >>> 0;
}

function chunkType(bytes: Uint8Array, off: number): string {
  return String.fromCharCode(bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]);
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

export async function decodePng(bytes: Uint8Array, inflate: Inflate): Promise<RawImage> {
  if (bytes.length < 8 || PNG_SIGNATURE.some((v, i) => bytes[i] !== v)) {
    throw new Error("not a PNG file");
  }
  let width = 0;
  let height = 0;
  let channels: 1 | 3 = 1;
  const idat: Uint8Array[] = [];
  let sawHeader = false;
  let pos = 8;
  while (pos + 8 <= bytes.length) {
    const length = u32(bytes, pos);
    const type = chunkType(bytes, pos + 4);
    const data = bytes.subarray(pos + 8, pos + 8 + length);
    if (type === "IHDR") {
      width = u32(data, 0);
      height = u32(data, 4);
      const depth = data[8];
      const color = data[9];
      const interlace = data[12];
      if (depth !== 8) throw new Error(`unsupported bit depth ${depth}`);
      if (color !== 0 && color !== 2) throw new Error(`unsupported color type ${color}`);
      if (interlace !== 0) throw new Error("interlaced PNGs are not supported");
      channels = color === 0 ? 1 : 3;
      sawHeader = true;
    } else if (type === "IDAT") {
      idat.push(data);
    } else if (type === "IEND") {
      break;
    }
    pos += 12 + length; // length + type + data + crc
  }
  if (!sawHeader || width === 0 || height === 0) throw new Error("missing or empty IHDR");
  if (idat.length === 0) throw new Error("missing IDAT");

  const compressed = new Uint8Array(idat.reduce((n, c) => n + c.length, 0));
  let off = 0;
  for (const c of idat) {
    compressed.set(c, off);
    off += c.length;
  }
  const raw = await inflate(compressed);
  const stride = width * channels;
  if (raw.length !== (stride + 1) * height) {
    throw new Error(`decompressed size ${raw.length} != expected ${(stride + 1) * height}`);
  }

  const pixels = new Uint8Array(stride * height);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const row = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const out = pixels.subarray(y * stride, (y + 1) * stride);
    const prev = y > 0 ? pixels.subarray((y - 1) * stride, y * stride) : null;
    for (let x = 0; x < stride; x++) {
      const left = x >= channels ? out[x - channels] : 0;
      const up = prev ? prev[x] : 0;
      const upLeft = prev && x >= channels ? prev[x - channels] : 0;
      let v: number;
      switch (filter) {
        case 0: v = row[x]; break;
        case 1: v = row[x] + left; break;
        case 2: v = row[x] + up; break;
        case 3: v = row[x] + ((left + up) >> 1); break;
        case 4: v = row[x] + paeth(left, up, upLeft); break;
        default: throw new Error(`unknown PNG filter ${filter} on row ${y}`);
      }
      out[x] = v & 0xff;
    }
  }
  return { width, height, channels, pixels };
}

/** Inflate a zlib stream with the browser-native DecompressionStream. */
export const inflateWithDecompressionStream: Inflate = async (data) => {
  const stream = new Blob([data as BlobPart]).stream().pipeThrough(new DecompressionStream("deflate"));
  const buf = await new Response(stream).arrayBuffer();
  return new Uint8Array(buf);
};
