import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";
import { quantizeUnit, dequantizeUnit, readPng16, writePng16 } from "../src/png.js";
import {
  centerCropBox,
  nearestIndices,
  omegaFromDepth,
  resampleNearest,
  unresampleNearest,
} from "../src/raster.js";
import { Rng } from "../src/rng.js";

describe("png io", () => {
  it("round-trips 16-bit rasters", () => {
    const dir = mkdtempSync(join(tmpdir(), "png-"));
    const rng = new Rng(0);
    const data = new Uint16Array(64 * 48);
    for (let i = 0; i < data.length; i++) data[i] = rng.int(65536);
    const path = join(dir, "t.png");
    writePng16(path, data, 64, 48);
    const back = readPng16(path);
    expect(back.width).toBe(64);
    expect(back.height).toBe(48);
    expect(Array.from(back.data)).toEqual(Array.from(data));
  });

  it("quantization error stays within half a step", () => {
    const rng = new Rng(1);
    const values = new Float64Array(500);
    for (let i = 0; i < values.length; i++) values[i] = rng.next();
    const back = dequantizeUnit(quantizeUnit(values));
    for (let i = 0; i < values.length; i++) {
      expect(Math.abs(back[i] - values[i])).toBeLessThanOrEqual(0.5 / 65535 + 1e-12);
    }
  });
});

describe("resampling", () => {
  it("identity when size matches", () => {
    const rng = new Rng(2);
    const data = new Uint16Array(32 * 32);
    for (let i = 0; i < data.length; i++) data[i] = rng.int(5000);
    const out = resampleNearest(data, 32, 32, 32, (n) => new Uint16Array(n));
    expect(Array.from(out)).toEqual(Array.from(data));
  });

  it("preserves the value set (nearest neighbor)", () => {
    const rng = new Rng(3);
    const data = new Uint16Array(40 * 40);
    for (let i = 0; i < data.length; i++) data[i] = rng.int(1000);
    const out = resampleNearest(data, 40, 40, 96, (n) => new Uint16Array(n));
    const src = new Set(data);
    for (const v of out) expect(src.has(v)).toBe(true);
  });

  it("non-square inputs crop to the centered square", () => {
    expect(centerCropBox(160, 120)).toEqual({ x0: 20, y0: 0, width: 120, height: 120 });
    expect(nearestIndices(100, 100)).toEqual(
      Int32Array.from({ length: 100 }, (_, i) => i),
    );
  });

  it("unresample inverts resample on matching grids", () => {
    const rng = new Rng(4);
    const native = new Float64Array(40 * 40);
    for (let i = 0; i < native.length; i++) native[i] = rng.next();
    const up = resampleNearest(native, 40, 40, 120, (n) => new Float64Array(n));
    const back = unresampleNearest(up, 120, 40, 40);
    expect(Array.from(back)).toEqual(Array.from(native));
  });
});

describe("omega from depth", () => {
  const cam = { fx: 100, fy: 100, cx: 32, cy: 24, width: 64, height: 48 };

  it("is one on the optical axis of a fronto-parallel plane", () => {
    const depth = new Uint16Array(64 * 48).fill(1500);
    const omega = omegaFromDepth(depth, cam);
    expect(omega[24 * 64 + 32]).toBeCloseTo(1.0, 9);
    // interior stays high, border stays zero (undefined facets)
    expect(omega[25 * 64 + 40]).toBeGreaterThan(0.9);
    expect(omega[0]).toBe(0);
  });

  it("is zero where depth or neighbors are missing", () => {
    const depth = new Uint16Array(64 * 48).fill(1200);
    depth[24 * 64 + 32] = 0;
    const omega = omegaFromDepth(depth, cam);
    expect(omega[24 * 64 + 32]).toBe(0);
    expect(omega[24 * 64 + 33]).toBe(0); // neighbor of the hole
    expect(omega[24 * 64 + 40]).toBeGreaterThan(0.9);
  });
});
