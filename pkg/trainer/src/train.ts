/** Training loop: Adam over the confidence-weighted cross entropy. */

import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { Rng } from "./rng.js";
import { ExportSet, TrainConfig, channelCount, drawExample, validateConfig } from "./data.js";
import { batchLoss } from "./loss.js";
import { SmearNet } from "./nn.js";
import { saveCheckpoint } from "./checkpoint.js";

export interface EpochLog {
  epoch: number;
  lr: number;
  meanLoss: number;
  labeledPixels: number;
}

export interface TrainResult {
  net: SmearNet;
  log: EpochLog[];
}

export function learningRate(cfg: TrainConfig, epoch: number): number {
  if (cfg.lrSchedule === "constant") return cfg.lr;
  return cfg.lr * 0.5 * (1 + Math.cos((Math.PI * epoch) / Math.max(cfg.epochs, 1)));
}

export function train(
  data: ExportSet, cfg: TrainConfig,
  onEpoch?: (log: EpochLog) => void,
): TrainResult {
  validateConfig(cfg, data.size);
  if (data.samples.length === 0) {
    throw new Error("empty training set");
  }
  const anyLabeled = data.samples.some((s) => s.flags.some((f) => f !== 0));
  if (!anyLabeled) {
    throw new Error("training set carries no labeled pixels");
  }

  const rng = new Rng(cfg.seed + 17);
  const net = new SmearNet(channelCount(cfg.inputModality), cfg.baseChannels, cfg.seed);
  const stepsPerEpoch = Math.max(1, Math.ceil((2 * data.samples.length) / cfg.batchSize));
  const log: EpochLog[] = [];
  let adamStep = 0;

  for (let epoch = 0; epoch < cfg.epochs; epoch++) {
    const lr = learningRate(cfg, epoch);
    let lossSum = 0;
    let lossCount = 0;
    let labeledPixels = 0;
    for (let step = 0; step < stepsPerEpoch; step++) {
      net.zeroGrads();
      let batchMean = 0;
      for (let k = 0; k < cfg.batchSize; k++) {
        const sample = data.samples[rng.int(data.samples.length)];
        const example = drawExample(sample, cfg, rng);
        const logits = net.forward(example.input);
        const { loss, labeled, dlogits } = batchLoss(
          logits, example.targets, data.weights, cfg.alpha, cfg.beta,
        );
        if (!Number.isFinite(loss)) {
          throw new Error(
            `NaN/inf loss at epoch ${epoch} step ${step} (lr=${lr}, labeled=${labeled})`,
          );
        }
        if (labeled > 0) {
          for (let i = 0; i < dlogits.data.length; i++) {
            dlogits.data[i] /= cfg.batchSize;
          }
          net.backward(dlogits);
        }
        batchMean += loss / cfg.batchSize;
        labeledPixels += labeled;
      }
      adamStep++;
      for (const p of net.params()) {
        p.adamStep(lr, adamStep, cfg.weightDecay);
      }
      lossSum += batchMean;
      lossCount++;
    }
    const entry = { epoch, lr, meanLoss: lossSum / lossCount, labeledPixels };
    log.push(entry);
    onEpoch?.(entry);
  }
  return { net, log };
}

export function trainAndSave(
  data: ExportSet, cfg: TrainConfig, ckptDir: string,
  onEpoch?: (log: EpochLog) => void,
): TrainResult {
  const result = train(data, cfg, onEpoch);
  mkdirSync(ckptDir, { recursive: true });
  saveCheckpoint(ckptDir, result.net, cfg, data.weights, data.size);
  writeFileSync(join(ckptDir, "train_log.json"), JSON.stringify(result.log, null, 2));
  return result;
}
