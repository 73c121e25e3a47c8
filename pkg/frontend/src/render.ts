// Pixel-exact stimulus rendering: expand the decoded pixels by an integer
// factor in software and putImageData the result. No drawImage, no CSS
// scaling, no smoothing anywhere in the path; the luminance relations under
// study must reach the screen untouched.

import type { RawImage } from "./png.js";

export interface ImageDataLike {
  readonly width: number;
  readonly height: number;
  readonly data: Uint8ClampedArray;
}

/** Subset of CanvasRenderingContext2D the renderer needs; a software fake
 * implementing the same byte-exact putImageData/getImageData contract is
 * substitutable in tests. */
export interface Canvas2DLike {
  fillStyle: string | unknown;
  fillRect(x: number, y: number, w: number, h: number): void;
  putImageData(data: ImageDataLike, x: number, y: number): void;
  getImageData(x: number, y: number, w: number, h: number): ImageDataLike;
}

export const BACKGROUND_GRAY = "#808080";

/** Use the real ImageData class in browsers (putImageData requires it),
 * a structural stand-in elsewhere. */
export function makeImageData(data: Uint8ClampedArray, width: number, height: number): ImageDataLike {
  const ctor = (globalThis as Record<string, unknown>)["ImageData"] as
    | (new (d: Uint8ClampedArray, w: number, h: number) => ImageDataLike)
    | undefined;
  if (ctor) return new ctor(data, width, height);
  return { width, height, data };
}

export function toRgba(img: RawImage): ImageDataLike {
  const out = new Uint8ClampedArray(img.width * img.height * 4);
  const n = img.width * img.height;
  for (let i = 0; i < n; i++) {
    const r = img.pixels[i * img.channels];
    const g = img.channels === 3 ? img.pixels[i * img.channels + 1] : r;
    const b = img.channels === 3 ? img.pixels[i * img.channels + 2] : r;
    out[i * 4] = r;
    out[i * 4 + 1] = g;
    out[i * 4 + 2] = b;
    out[i * 4 + 3] = 255;
  }
  return makeImageData(out, img.width, img.height);
}

/** Nearest-neighbor expansion by an integer factor (no interpolation). */
export function scaleNearest(src: ImageDataLike, zoom: number): ImageDataLike {
  if (!Number.isInteger(zoom) || zoom < 1) {
    throw new Error(`zoom must be a positive integer, got ${zoom}`);
  }
  if (zoom === 1) return src;
  const w = src.width * zoom;
  const h = src.height * zoom;
  const out = new Uint8ClampedArray(w * h * 4);
  for (let y = 0; y < h; y++) {
    const sy = (y / zoom) | 0;
    for (let x = 0; x < w; x++) {
      const sx = (x / zoom) | 0;
      const si = (sy * src.width + sx) * 4;
      const di = (y * w + x) * 4;
      out[di] = src.data[si];
      out[di + 1] = src.data[si + 1];
      out[di + 2] = src.data[si + 2];
      out[di + 3] = src.data[si + 3];
    }
  }
  return makeImageData(out, w, h);
}

/** Largest integer zoom that fits the viewport, at least 1. */
export function fittingZoom(imgW: number, imgH: number, maxW: number, maxH: number): number {
  return Math.max(1, Math.min(Math.floor(maxW / imgW), Math.floor(maxH / imgH)));
}

export interface Placement {
  x: number;
  y: number;
  zoom: number;
  view: ImageDataLike;
}

/** Paint the neutral background and the integer-scaled stimulus, centered. */
export function renderStimulus(
  ctx: Canvas2DLike,
  canvasW: number,
  canvasH: number,
  img: RawImage,
  zoom: number,
): Placement {
  const view = scaleNearest(toRgba(img), zoom);
  if (view.width > canvasW || view.height > canvasH) {
    throw new Error(`zoomed stimulus ${view.width}x${view.height} exceeds canvas ${canvasW}x${canvasH}`);
  }
  ctx.fillStyle = BACKGROUND_GRAY;
  ctx.fillRect(0, 0, canvasW, canvasH);
  const x = Math.floor((canvasW - view.width) / 2);
  const y = Math.floor((canvasH - view.height) / 2);
  ctx.putImageData(view, x, y);
  return { x, y, zoom, view };
}
