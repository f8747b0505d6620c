/** Score raw dataset frames with a trained checkpoint.
 *
 * Frames are taken through the same geometry as the exporter (center-square
 * crop + nearest-neighbor resample to the training scale), scored, and the
 * probabilities mapped back onto the native raster as 16-bit score PNGs
 * under <dataset>/scores/.
 */

import { readFileSync, readdirSync } from "node:fs";
import { join } from "node:path";
import { CheckpointMeta } from "./checkpoint.js";
import { DEPTH_SCALE_MM, InputModality, assembleChannels } from "./data.js";
import { SmearNet, probabilityFromLogits } from "./nn.js";
import { quantizeUnit, readPng16, writePng16 } from "./png.js";
import {
  CameraIntrinsics,
  omegaFromDepth,
  resampleNearest,
  unresampleNearest,
} from "./raster.js";

export interface InferOptions {
  /** When set, must equal the checkpoint's modality (guards against scoring
   * with a model trained on different inputs). */
  expectModality?: InputModality;
}

export function listFrameIds(datasetDir: string): number[] {
  const ids: number[] = [];
  for (const name of readdirSync(join(datasetDir, "depth"))) {
    const m = /^(\d{6})\.png$/.exec(name);
    if (m) ids.push(Number(m[1]));
  }
  return ids.sort((a, b) => a - b);
}

export function readIntrinsics(datasetDir: string): CameraIntrinsics {
  const raw = JSON.parse(readFileSync(join(datasetDir, "intrinsics.json"), "utf-8"));
  if (raw.depth_unit && raw.depth_unit !== "mm") {
    throw new Error(`unsupported depth unit ${raw.depth_unit}`);
  }
  return {
    fx: raw.fx, fy: raw.fy, cx: raw.cx, cy: raw.cy,
    width: raw.width, height: raw.height,
  };
}

export function scoreFrame(
  net: SmearNet, meta: CheckpointMeta, depth: Uint16Array, cam: CameraIntrinsics,
): Float64Array {
  const size = meta.exportSize;
  const omegaNative = omegaFromDepth(depth, cam);
  const depthResampled = resampleNearest(
    depth, cam.width, cam.height, size, (n) => new Uint16Array(n),
  );
  const omegaResampled = resampleNearest(
    omegaNative, cam.width, cam.height, size, (n) => new Float64Array(n),
  );
  const depthNorm = new Float64Array(size * size);
  for (let i = 0; i < depthNorm.length; i++) {
    depthNorm[i] = depthResampled[i] / DEPTH_SCALE_MM;
  }
  const input = assembleChannels(depthNorm, omegaResampled, size, meta.inputModality);
  const logits = net.forward(input);
  const p = probabilityFromLogits(logits);
  for (const value of p) {
    if (!Number.isFinite(value)) {
      throw new Error("non-finite score produced");
    }
  }
  return unresampleNearest(p, size, cam.width, cam.height, 0);
}

export function inferDataset(
  net: SmearNet, meta: CheckpointMeta, datasetDir: string,
  options: InferOptions = {},
): string[] {
  if (options.expectModality && options.expectModality !== meta.inputModality) {
    throw new Error(
      `modality mismatch: checkpoint is ${meta.inputModality}, ` +
      `dataset run requested ${options.expectModality}`,
    );
  }
  const cam = readIntrinsics(datasetDir);
  const written: string[] = [];
  for (const id of listFrameIds(datasetDir)) {
    const name = String(id).padStart(6, "0");
    const depth = readPng16(join(datasetDir, "depth", `${name}.png`));
    if (depth.width !== cam.width || depth.height !== cam.height) {
      throw new Error(`frame ${id}: raster does not match intrinsics`);
    }
    const scores = scoreFrame(net, meta, depth.data, cam);
    const out = join(datasetDir, "scores", `${name}.png`);
    writePng16(out, quantizeUnit(scores), cam.width, cam.height);
    written.push(out);
  }
  return written;
}
