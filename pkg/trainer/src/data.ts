/** Export-directory loading, channel assembly, and augmentation. */

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { Rng } from "./rng.js";
import { Feature, feature } from "./nn.js";
import { PixelTargets } from "./loss.js";
import { ClassWeights } from "./loss.js";
import { dequantizeUnit, readPng16, readPng8 } from "./png.js";

export type InputModality = "depth" | "omega" | "depth+omega";

export interface TrainConfig {
  epochs: number;
  batchSize: number;
  lr: number;
  weightDecay: number;
  cropSize: number;
  lrSchedule: "constant" | "cosine";
  alpha: number;
  beta: number;
  inputModality: InputModality;
  baseChannels: number;
  seed: number;
}

export const DEPTH_SCALE_MM = 10000;

export function defaultTrainConfig(): TrainConfig {
  return {
    epochs: 20,
    batchSize: 4,
    lr: 1e-3,
    weightDecay: 1e-7,
    cropSize: 64,
    lrSchedule: "cosine",
    alpha: 0.3,
    beta: 0.7,
    inputModality: "depth+omega",
    baseChannels: 8,
    seed: 0,
  };
}

export function validateConfig(cfg: TrainConfig, exportSize: number): void {
  if (cfg.alpha <= 0 || cfg.beta <= 0) {
    throw new Error("alpha and beta must be positive");
  }
  if (cfg.cropSize > exportSize) {
    throw new Error(`cropSize ${cfg.cropSize} exceeds export size ${exportSize}`);
  }
  if (cfg.cropSize % 4 !== 0) {
    throw new Error("cropSize must be divisible by 4");
  }
  if (cfg.epochs < 1 || cfg.batchSize < 1) {
    throw new Error("epochs and batchSize must be >= 1");
  }
}

export function channelCount(modality: InputModality): number {
  return modality === "depth+omega" ? 2 : 1;
}

export interface Sample {
  /** Normalized depth (mm / DEPTH_SCALE_MM). */
  depth: Float64Array;
  /** Normal-view values in [0, 1]. */
  omega: Float64Array;
  /** Evidence flags per pixel: bit0 v, bit1 b, bit2 e. */
  flags: Uint8Array;
  /** Valid-evidence confidence in [0, 1]. */
  confidence: Float64Array;
  size: number;
}

export interface ExportSet {
  samples: Sample[];
  size: number;
  weights: ClassWeights;
  alpha: number;
  beta: number;
}

interface ManifestFrame {
  id: number;
  depth: string;
  omega: string;
  label: string;
  confidence: string;
  evidence: string;
  gt?: string;
}

interface Manifest {
  size: number;
  alpha: number;
  beta: number;
  weights: ClassWeights;
  evidence_counts?: { v: number; b: number; e: number };
  frames: ManifestFrame[];
}

/** Load one or more export directories; class weights recombine from the
 * summed evidence counts so multi-scene corpora stay Eq-balanced. */
export function loadExports(dirs: string[]): ExportSet {
  if (dirs.length === 0) {
    throw new Error("no export directories given");
  }
  const samples: Sample[] = [];
  let size = -1;
  let alpha = 0.3;
  let beta = 0.7;
  const counts = { v: 0, b: 0, e: 0 };
  let haveCounts = true;
  let fallback: ClassWeights | null = null;

  for (const dir of dirs) {
    const manifest = JSON.parse(
      readFileSync(join(dir, "manifest.json"), "utf-8"),
    ) as Manifest;
    if (size === -1) {
      size = manifest.size;
      alpha = manifest.alpha;
      beta = manifest.beta;
    } else if (manifest.size !== size) {
      throw new Error(`export size mismatch: ${manifest.size} vs ${size}`);
    }
    fallback = manifest.weights;
    if (manifest.evidence_counts) {
      counts.v += manifest.evidence_counts.v;
      counts.b += manifest.evidence_counts.b;
      counts.e += manifest.evidence_counts.e;
    } else {
      haveCounts = false;
    }
    for (const frame of manifest.frames) {
      const depthRaw = readPng16(join(dir, frame.depth));
      const omega = dequantizeUnit(readPng16(join(dir, frame.omega)).data);
      const flags = readPng8(join(dir, frame.evidence)).data;
      const confidence = dequantizeUnit(readPng16(join(dir, frame.confidence)).data);
      const depth = new Float64Array(depthRaw.data.length);
      for (let i = 0; i < depth.length; i++) {
        depth[i] = depthRaw.data[i] / DEPTH_SCALE_MM;
      }
      samples.push({ depth, omega, flags, confidence, size });
    }
  }

  let weights: ClassWeights;
  const total = counts.v + counts.b + counts.e;
  if (haveCounts && total > 0) {
    weights = {
      w_v: 1 - counts.v / total,
      w_b: 1 - counts.b / total,
      w_e: 1 - counts.e / total,
    };
  } else if (fallback) {
    weights = fallback;
  } else {
    throw new Error("export manifests carry no class weights");
  }
  return { samples, size, weights, alpha, beta };
}

export function assembleChannels(
  depth: Float64Array, omega: Float64Array, side: number, modality: InputModality,
): Feature {
  const c = channelCount(modality);
  const x = feature(side, side, c);
  const n = side * side;
  for (let i = 0; i < n; i++) {
    if (modality === "depth") {
      x.data[i] = depth[i];
    } else if (modality === "omega") {
      x.data[i] = omega[i];
    } else {
      x.data[2 * i] = depth[i];
      x.data[2 * i + 1] = omega[i];
    }
  }
  return x;
}

function cropPlane<T extends Float64Array | Uint8Array>(
  src: T, size: number, y0: number, x0: number, crop: number,
  makeOut: (n: number) => T,
): T {
  const out = makeOut(crop * crop);
  for (let y = 0; y < crop; y++) {
    for (let x = 0; x < crop; x++) {
      out[y * crop + x] = src[(y0 + y) * size + x0 + x];
    }
  }
  return out;
}

/** Rotate a square single-channel plane by k right angles. */
export function rot90Plane<T extends Float64Array | Uint8Array>(
  src: T, side: number, k: number, makeOut: (n: number) => T,
): T {
  k = ((k % 4) + 4) % 4;
  if (k === 0) return src.slice() as T;
  const out = makeOut(side * side);
  for (let y = 0; y < side; y++) {
    for (let x = 0; x < side; x++) {
      let ty: number;
      let tx: number;
      if (k === 1) {
        ty = side - 1 - x;
        tx = y;
      } else if (k === 2) {
        ty = side - 1 - y;
        tx = side - 1 - x;
      } else {
        ty = x;
        tx = side - 1 - y;
      }
      out[ty * side + tx] = src[y * side + x];
    }
  }
  return out;
}

export interface TrainingExample {
  input: Feature;
  targets: PixelTargets;
}

/** Random crop plus right-angle rotation; re-draws until the crop holds at
 * least one labeled pixel (bounded retries). */
export function drawExample(
  sample: Sample, cfg: TrainConfig, rng: Rng,
): TrainingExample {
  const crop = cfg.cropSize;
  const span = sample.size - crop;
  let y0 = 0;
  let x0 = 0;
  let flags: Uint8Array = new Uint8Array(crop * crop);
  for (let attempt = 0; attempt < 20; attempt++) {
    y0 = span > 0 ? rng.int(span + 1) : 0;
    x0 = span > 0 ? rng.int(span + 1) : 0;
    flags = cropPlane(sample.flags, sample.size, y0, x0, crop,
                      (n) => new Uint8Array(n));
    if (flags.some((f) => f !== 0)) break;
  }
  let depth = cropPlane(sample.depth, sample.size, y0, x0, crop,
                        (n) => new Float64Array(n));
  let omega = cropPlane(sample.omega, sample.size, y0, x0, crop,
                        (n) => new Float64Array(n));
  let conf = cropPlane(sample.confidence, sample.size, y0, x0, crop,
                       (n) => new Float64Array(n));
  const k = rng.int(4);
  if (k !== 0) {
    depth = rot90Plane(depth, crop, k, (n) => new Float64Array(n));
    omega = rot90Plane(omega, crop, k, (n) => new Float64Array(n));
    conf = rot90Plane(conf, crop, k, (n) => new Float64Array(n));
    flags = rot90Plane(flags, crop, k, (n) => new Uint8Array(n));
  }
  return {
    input: assembleChannels(depth, omega, crop, cfg.inputModality),
    targets: { flags, confidence: conf },
  };
}
