/**
 * Confidence-weighted cross entropy over self-annotated evidence flags.
 *
 * Per pixel: L = -alpha*(w_b*b + w_e*e)*log(p) - beta*c*w_v*v*log(1-p).
 * Pixels with no flags contribute exactly zero, so unlabeled data cannot
 * steer the classifier. The batch loss is the mean over labeled pixels.
 */

import { Feature, feature } from "./nn.js";

export interface ClassWeights {
  w_b: number;
  w_e: number;
  w_v: number;
}

const EPS = 1e-12;

/** Exact per-pixel loss value (exposed for cross-component testing). */
export function lossUnit(
  b: number, e: number, v: number, c: number, p: number,
  weights: ClassWeights, alpha: number, beta: number,
): number {
  const pos = alpha * (weights.w_b * b + weights.w_e * e);
  const neg = beta * c * weights.w_v * v;
  let loss = 0;
  if (pos !== 0) loss -= pos * Math.log(Math.max(p, EPS));
  if (neg !== 0) loss -= neg * Math.log(Math.max(1 - p, EPS));
  return loss;
}

/** dL/dp of lossUnit. */
export function lossUnitGradP(
  b: number, e: number, v: number, c: number, p: number,
  weights: ClassWeights, alpha: number, beta: number,
): number {
  const pos = alpha * (weights.w_b * b + weights.w_e * e);
  const neg = beta * c * weights.w_v * v;
  let grad = 0;
  if (pos !== 0) grad -= pos / Math.max(p, EPS);
  if (neg !== 0) grad += neg / Math.max(1 - p, EPS);
  return grad;
}

export interface PixelTargets {
  /** Evidence flags, one byte per pixel: bit0 v, bit1 b, bit2 e. */
  flags: Uint8Array;
  /** Valid-evidence confidence in [0, 1]. */
  confidence: Float64Array;
}

export interface BatchLoss {
  loss: number;
  labeled: number;
  /** d(mean loss)/d(logits), same shape as the logits. */
  dlogits: Feature;
}

/**
 * Mean loss over labeled pixels plus its gradient w.r.t. the two logits.
 *
 * p = softmax(z)[1] = sigmoid(z1 - z0), so with s = z1 - z0:
 * dL/ds = -pos*(1-p) + neg*p, dz1 = dL/ds, dz0 = -dL/ds.
 */
export function batchLoss(
  logits: Feature, targets: PixelTargets,
  weights: ClassWeights, alpha: number, beta: number,
): BatchLoss {
  const n = logits.h * logits.w;
  const dlogits = feature(logits.h, logits.w, 2);
  let labeled = 0;
  for (let i = 0; i < n; i++) {
    if (targets.flags[i] !== 0) labeled++;
  }
  if (labeled === 0) {
    return { loss: 0, labeled: 0, dlogits };
  }
  let total = 0;
  for (let i = 0; i < n; i++) {
    const f = targets.flags[i];
    if (f === 0) continue;
    const v = f & 1 ? 1 : 0;
    const b = f & 2 ? 1 : 0;
    const e = f & 4 ? 1 : 0;
    const c = targets.confidence[i];
    const s = logits.data[2 * i + 1] - logits.data[2 * i];
    const p = 1 / (1 + Math.exp(-s));
    total += lossUnit(b, e, v, c, p, weights, alpha, beta);
    const pos = alpha * (weights.w_b * b + weights.w_e * e);
    const neg = beta * c * weights.w_v * v;
    const ds = (-pos * (1 - p) + neg * p) / labeled;
    dlogits.data[2 * i + 1] = ds;
    dlogits.data[2 * i] = -ds;
  }
  return { loss: total / labeled, labeled, dlogits };
}
