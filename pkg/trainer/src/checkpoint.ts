/** Self-describing checkpoints: config + weight manifest in JSON, raw
 * float64 weights in a sidecar binary. */

import { createHash } from "node:crypto";
import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { ClassWeights } from "./loss.js";
import { InputModality, TrainConfig, channelCount } from "./data.js";
import { SmearNet } from "./nn.js";

export interface CheckpointMeta {
  trainConfig: TrainConfig;
  weights: ClassWeights;
  exportSize: number;
  inputModality: InputModality;
  baseChannels: number;
  paramSizes: Record<string, number>;
  configHash: string;
}

export function saveCheckpoint(
  dir: string, net: SmearNet, cfg: TrainConfig, weights: ClassWeights,
  exportSize: number,
): void {
  mkdirSync(dir, { recursive: true });
  const params = net.params();
  const paramSizes: Record<string, number> = {};
  let total = 0;
  for (const p of params) {
    paramSizes[p.name] = p.value.length;
    total += p.value.length;
  }
  const flat = new Float64Array(total);
  let offset = 0;
  for (const p of params) {
    flat.set(p.value, offset);
    offset += p.value.length;
  }
  const body = {
    trainConfig: cfg,
    weights,
    exportSize,
    inputModality: cfg.inputModality,
    baseChannels: cfg.baseChannels,
    paramSizes,
  };
  const configHash = createHash("sha256")
    .update(JSON.stringify(body))
    .digest("hex")
    .slice(0, 16);
  const meta: CheckpointMeta = { ...body, configHash };
  writeFileSync(join(dir, "checkpoint.json"), JSON.stringify(meta, null, 2));
  writeFileSync(join(dir, "weights.bin"), Buffer.from(flat.buffer));
}

export function loadCheckpoint(dir: string): { net: SmearNet; meta: CheckpointMeta } {
  const meta = JSON.parse(
    readFileSync(join(dir, "checkpoint.json"), "utf-8"),
  ) as CheckpointMeta;
  const net = new SmearNet(channelCount(meta.inputModality), meta.baseChannels,
                           meta.trainConfig.seed);
  const raw = readFileSync(join(dir, "weights.bin"));
  const flat = new Float64Array(raw.buffer, raw.byteOffset, raw.byteLength / 8);
  let offset = 0;
  for (const p of net.params()) {
    const expect = meta.paramSizes[p.name];
    if (expect !== p.value.length) {
      throw new Error(`checkpoint mismatch for ${p.name}: ${expect} vs ${p.value.length}`);
    }
    p.value.set(flat.subarray(offset, offset + p.value.length));
    offset += p.value.length;
  }
  return { net, meta };
}
