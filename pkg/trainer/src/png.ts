/** Single-channel PNG raster IO matching the dataset layout (16-bit mm
 * depth / quantized [0,1] rasters, 8-bit labels and evidence bits). */

import { readFileSync, writeFileSync, mkdirSync } from "node:fs";
import { dirname } from "node:path";
import { decode, encode } from "fast-png";

export interface Raster16 {
  data: Uint16Array;
  width: number;
  height: number;
}

export interface Raster8 {
  data: Uint8Array;
  width: number;
  height: number;
}

export function readPng16(path: string): Raster16 {
  const img = decode(readFileSync(path));
  if (img.channels !== 1 || img.depth !== 16) {
    throw new Error(`${path}: expected 16-bit single-channel PNG`);
  }
  return { data: img.data as Uint16Array, width: img.width, height: img.height };
}

export function readPng8(path: string): Raster8 {
  const img = decode(readFileSync(path));
  if (img.channels !== 1 || img.depth !== 8) {
    throw new Error(`${path}: expected 8-bit single-channel PNG`);
  }
  return { data: img.data as Uint8Array, width: img.width, height: img.height };
}

export function writePng16(path: string, data: Uint16Array, width: number,
                           height: number): void {
  mkdirSync(dirname(path), { recursive: true });
  writeFileSync(path, Buffer.from(encode({ data, width, height, channels: 1, depth: 16 })));
}

/** Quantize [0,1] scores to the 16-bit raster convention. */
export function quantizeUnit(values: Float64Array): Uint16Array {
  const out = new Uint16Array(values.length);
  for (let i = 0; i < values.length; i++) {
    const v = Math.min(Math.max(values[i], 0), 1);
    out[i] = Math.round(v * 65535);
  }
  return out;
}

export function dequantizeUnit(raw: Uint16Array): Float64Array {
  const out = new Float64Array(raw.length);
  for (let i = 0; i < raw.length; i++) {
    out[i] = raw[i] / 65535;
  }
  return out;
}
