// Shared test utilities: a node-side zlib inflate, a PNG encoder for fixture
// images (so the decoder is checked against an independent implementation),
// and a byte-exact software canvas context.

import { deflateSync, inflateSync } from "node:zlib";
import type { Inflate } from "../src/png.js";
import type { Canvas2DLike, ImageDataLike } from "../src/render.js";

export const nodeInflate: Inflate = async (data) => new Uint8Array(inflateSync(data));

function crc32(bytes: Uint8Array): number {
  let crc = 0xffffffff;
  for (const b of bytes) {
    crc ^= b;
    for (let k = 0; k < 8; k++) crc = (crc >>> 1) ^ (0xedb88320 & -(crc & 1));
  }
  return (crc ^ 0xffffffff) >>> 0;
}

function chunk(type: string, data: Uint8Array): Uint8Array {
  const out = new Uint8Array(12 + data.length);
  const view = new DataView(out.buffer);
  view.setUint32(0, data.length);
  for (let i = 0; i < 4; i++) out[4 + i] = type.charCodeAt(i);
  out.set(data, 8);
  view.setUint32(8 + data.length, crc32(out.subarray(4, 8 + data.length)));
  return out;
}

export interface Fixture {
  width: number;
  height: number;
  channels: 1 | 3;
  pixels: Uint8Array; // row-major, width*height*channels
}

/** Encode a PNG, applying the requested filter type to each row (the filter
 * transform here is written forward, independently of the decoder's inverse). */
export function encodePng(img: Fixture, rowFilters?: number[]): Uint8Array {
  const { width, height, channels, pixels } = img;
  const stride = width * channels;
  const raw = new Uint8Array((stride + 1) * height);
  const paeth = (a: number, b: number, c: number) => {
    const p = a + b - c;
    const pa = Math.abs(p - a);
    const pb = Math.abs(p - b);
    const pc = Math.abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
  };
  for (let y = 0; y < height; y++) {
    const filter = rowFilters ? rowFilters[y % rowFilters.length] : 0;
    raw[y * (stride + 1)] = filter;
    for (let x = 0; x < stride; x++) {
      const cur = pixels[y * stride + x];
      const left = x >= channels ? pixels[y * stride + x - channels] : 0;
      const up = y > 0 ? pixels[(y - 1) * stride + x] : 0;
      const upLeft = y > 0 && x >= channels ? pixels[(y - 1) * stride + x - channels] : 0;
      let v: number;
      switch (filter) {
        case 0: v = cur; break;
        case 1: v = cur - left; break;
        case 2: v = cur - up; break;
        case 3: v = cur - ((left + up) >> 1); break;
        case 4: v = cur - paeth(left, up, upLeft); break;
        default: throw new Error(`bad filter ${filter}`);
      }
      raw[y * (stride + 1) + 1 + x] = v & 0xff;
    }
  }
  const ihdr = new Uint8Array(13);
  const hv = new DataView(ihdr.buffer);
  hv.setUint32(0, width);
  hv.setUint32(4, height);
  ihdr[8] = 8; // bit depth
  ihdr[9] = channels === 1 ? 0 : 2; // color type
  const signature = Uint8Array.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);
  const parts = [
    signature,
    chunk("IHDR", ihdr),
    chunk("IDAT", new Uint8Array(deflateSync(raw))),
    chunk("IEND", new Uint8Array(0)),
  ];
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let off = 0;
  for (const p of parts) {
    out.set(p, off);
    off += p.length;
  }
  return out;
}

/** Software canvas context with putImageData/getImageData byte semantics. */
export class FakeContext implements Canvas2DLike {
  fillStyle: string = "#000000";
  readonly buffer: Uint8ClampedArray;

  constructor(
    readonly width: number,
    readonly height: number,
  ) {
    this.buffer = new Uint8ClampedArray(width * height * 4);
  }

  private parseFill(): [number, number, number] {
    const m = /^#([0-9a-f]{6})$/i.exec(String(this.fillStyle));
    if (!m) throw new Error(`FakeContext only understands #rrggbb, got ${this.fillStyle}`);
    const v = parseInt(m[1], 16);
    return [(v >> 16) & 0xff, (v >> 8) & 0xff, v & 0xff];
  }

  fillRect(x: number, y: number, w: number, h: number): void {
    const [r, g, b] = this.parseFill();
    for (let yy = y; yy < y + h; yy++) {
      for (let xx = x; xx < x + w; xx++) {
        if (xx < 0 || yy < 0 || xx >= this.width || yy >= this.height) continue;
        const i = (yy * this.width + xx) * 4;
        this.buffer[i] = r;
        this.buffer[i + 1] = g;
        this.buffer[i + 2] = b;
        this.buffer[i + 3] = 255;
      }
    }
  }

  putImageData(data: ImageDataLike, x: number, y: number): void {
    for (let yy = 0; yy < data.height; yy++) {
      for (let xx = 0; xx < data.width; xx++) {
        const dx = x + xx;
        const dy = y + yy;
        if (dx < 0 || dy < 0 || dx >= this.width || dy >= this.height) continue;
        const si = (yy * data.width + xx) * 4;
        const di = (dy * this.width + dx) * 4;
        for (let k = 0; k < 4; k++) this.buffer[di + k] = data.data[si + k];
      }
    }
  }

  getImageData(x: number, y: number, w: number, h: number): ImageDataLike {
    const out = new Uint8ClampedArray(w * h * 4);
    for (let yy = 0; yy < h; yy++) {
      for (let xx = 0; xx < w; xx++) {
        const si = ((y + yy) * this.width + (x + xx)) * 4;
        const di = (yy * w + xx) * 4;
        for (let k = 0; k < 4; k++) out[di + k] = this.buffer[si + k];
      }
    }
    return { width: w, height: h, data: out };
  }
}
