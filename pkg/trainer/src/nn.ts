/**
 * Minimal channels-last CNN with hand-derived backward passes.
 *
 * Everything runs on Float64Array so analytic gradients agree with finite
 * differences to near machine precision (the test suite checks this).
 */

import { Rng } from "./rng.js";

export interface Feature {
  data: Float64Array;
  h: number;
  w: number;
  c: number;
}

export function feature(h: number, w: number, c: number, data?: Float64Array): Feature {
  return { data: data ?? new Float64Array(h * w * c), h, w, c };
}

export class Param {
  value: Float64Array;
  grad: Float64Array;
  private m: Float64Array;
  private v: Float64Array;

  constructor(public name: string, size: number) {
    this.value = new Float64Array(size);
    this.grad = new Float64Array(size);
    this.m = new Float64Array(size);
    this.v = new Float64Array(size);
  }

  zeroGrad(): void {
    this.grad.fill(0);
  }

  adamStep(lr: number, t: number, weightDecay: number, beta1 = 0.9, beta2 = 0.999,
           eps = 1e-8): void {
    const bc1 = 1 - Math.pow(beta1, t);
    const bc2 = 1 - Math.pow(beta2, t);
    for (let i = 0; i < this.value.length; i++) {
      const g = this.grad[i] + weightDecay * this.value[i];
      this.m[i] = beta1 * this.m[i] + (1 - beta1) * g;
      this.v[i] = beta2 * this.v[i] + (1 - beta2) * g * g;
      this.value[i] -= (lr * (this.m[i] / bc1)) / (Math.sqrt(this.v[i] / bc2) + eps);
    }
  }
}

interface Layer {
  params(): Param[];
  forward(x: Feature): Feature;
  backward(dy: Feature): Feature;
}

/** 3x3 convolution, stride 1, zero padding, optional fused ReLU. */
export class Conv3x3 implements Layer {
  weight: Param;
  bias: Param;
  private x: Feature | null = null;
  private y: Feature | null = null;

  constructor(name: string, public cin: number, public cout: number,
              public relu: boolean, rng: Rng) {
    this.weight = new Param(`${name}.w`, 9 * cin * cout);
    this.bias = new Param(`${name}.b`, cout);
    const scale = Math.sqrt(2 / (9 * cin));
    for (let i = 0; i < this.weight.value.length; i++) {
      this.weight.value[i] = rng.normal() * scale;
    }
  }

  params(): Param[] {
    return [this.weight, this.bias];
  }

  forward(x: Feature): Feature {
    const { h, w } = x;
    const cin = this.cin;
    const cout = this.cout;
    const y = feature(h, w, cout);
    const wv = this.weight.value;
    const bv = this.bias.value;
    const acc = new Float64Array(cout);
    for (let i = 0; i < h; i++) {
      for (let j = 0; j < w; j++) {
        acc.set(bv);
        for (let di = -1; di <= 1; di++) {
          const ii = i + di;
          if (ii < 0 || ii >= h) continue;
          for (let dj = -1; dj <= 1; dj++) {
            const jj = j + dj;
            if (jj < 0 || jj >= w) continue;
            const xoff = (ii * w + jj) * cin;
            const woff = ((di + 1) * 3 + (dj + 1)) * cin * cout;
            for (let ic = 0; ic < cin; ic++) {
              const xv = x.data[xoff + ic];
              if (xv === 0) continue;
              const wb = woff + ic * cout;
              for (let oc = 0; oc < cout; oc++) {
                acc[oc] += xv * wv[wb + oc];
              }
            }
          }
        }
        const yoff = (i * w + j) * cout;
        if (this.relu) {
          for (let oc = 0; oc < cout; oc++) {
            y.data[yoff + oc] = acc[oc] > 0 ? acc[oc] : 0;
          }
        } else {
          y.data.set(acc, yoff);
        }
      }
    }
    this.x = x;
    this.y = y;
    return y;
  }

  backward(dy: Feature): Feature {
    const x = this.x!;
    const y = this.y!;
    const { h, w } = x;
    const cin = this.cin;
    const cout = this.cout;
    const dx = feature(h, w, cin);
    const wv = this.weight.value;
    const wg = this.weight.grad;
    const bg = this.bias.grad;
    const dloc = new Float64Array(cout);
    for (let i = 0; i < h; i++) {
      for (let j = 0; j < w; j++) {
        const yoff = (i * w + j) * cout;
        for (let oc = 0; oc < cout; oc++) {
          let d = dy.data[yoff + oc];
          if (this.relu && y.data[yoff + oc] <= 0) d = 0;
          dloc[oc] = d;
          bg[oc] += d;
        }
        for (let di = -1; di <= 1; di++) {
          const ii = i + di;
          if (ii < 0 || ii >= h) continue;
          for (let dj = -1; dj <= 1; dj++) {
            const jj = j + dj;
            if (jj < 0 || jj >= w) continue;
            const xoff = (ii * w + jj) * cin;
            const woff = ((di + 1) * 3 + (dj + 1)) * cin * cout;
            for (let ic = 0; ic < cin; ic++) {
              const xv = x.data[xoff + ic];
              const wb = woff + ic * cout;
              let acc = 0;
              for (let oc = 0; oc < cout; oc++) {
                const d = dloc[oc];
                if (d === 0) continue;
                wg[wb + oc] += xv * d;
                acc += wv[wb + oc] * d;
              }
              dx.data[xoff + ic] += acc;
            }
          }
        }
      }
    }
    return dx;
  }
}

/** 1x1 convolution (the logit head). */
export class Conv1x1 implements Layer {
  weight: Param;
  bias: Param;
  private x: Feature | null = null;

  constructor(name: string, public cin: number, public cout: number, rng: Rng) {
    this.weight = new Param(`${name}.w`, cin * cout);
    this.bias = new Param(`${name}.b`, cout);
    const scale = Math.sqrt(2 / cin);
    for (let i = 0; i < this.weight.value.length; i++) {
      this.weight.value[i] = rng.normal() * scale;
    }
  }

  params(): Param[] {
    return [this.weight, this.bias];
  }

  forward(x: Feature): Feature {
    const n = x.h * x.w;
    const y = feature(x.h, x.w, this.cout);
    const wv = this.weight.value;
    const bv = this.bias.value;
    for (let p = 0; p < n; p++) {
      const xoff = p * this.cin;
      const yoff = p * this.cout;
      for (let oc = 0; oc < this.cout; oc++) {
        let acc = bv[oc];
        for (let ic = 0; ic < this.cin; ic++) {
          acc += x.data[xoff + ic] * wv[ic * this.cout + oc];
        }
        y.data[yoff + oc] = acc;
      }
    }
    this.x = x;
    return y;
  }

  backward(dy: Feature): Feature {
    const x = this.x!;
    const n = x.h * x.w;
    const dx = feature(x.h, x.w, this.cin);
    const wv = this.weight.value;
    const wg = this.weight.grad;
    const bg = this.bias.grad;
    for (let p = 0; p < n; p++) {
      const xoff = p * this.cin;
      const yoff = p * this.cout;
      for (let oc = 0; oc < this.cout; oc++) {
        const d = dy.data[yoff + oc];
        if (d === 0) continue;
        bg[oc] += d;
        for (let ic = 0; ic < this.cin; ic++) {
          wg[ic * this.cout + oc] += x.data[xoff + ic] * d;
          dx.data[xoff + ic] += wv[ic * this.cout + oc] * d;
        }
      }
    }
    return dx;
  }
}

/** 2x2 max pooling, stride 2 (input sides must be even). */
export class MaxPool2 implements Layer {
  private argmax: Int32Array | null = null;
  private inShape: [number, number, number] = [0, 0, 0];

  params(): Param[] {
    return [];
  }

  forward(x: Feature): Feature {
    const oh = x.h >> 1;
    const ow = x.w >> 1;
    const c = x.c;
    const y = feature(oh, ow, c);
    const arg = new Int32Array(oh * ow * c);
    for (let i = 0; i < oh; i++) {
      for (let j = 0; j < ow; j++) {
        for (let ch = 0; ch < c; ch++) {
          let best = -Infinity;
          let bestIdx = -1;
          for (let di = 0; di < 2; di++) {
            for (let dj = 0; dj < 2; dj++) {
              const idx = ((2 * i + di) * x.w + 2 * j + dj) * c + ch;
              if (x.data[idx] > best) {
                best = x.data[idx];
                bestIdx = idx;
              }
            }
          }
          y.data[(i * ow + j) * c + ch] = best;
          arg[(i * ow + j) * c + ch] = bestIdx;
        }
      }
    }
    this.argmax = arg;
    this.inShape = [x.h, x.w, x.c];
    return y;
  }

  backward(dy: Feature): Feature {
    const [h, w, c] = this.inShape;
    const dx = feature(h, w, c);
    const arg = this.argmax!;
    for (let i = 0; i < dy.data.length; i++) {
      dx.data[arg[i]] += dy.data[i];
    }
    return dx;
  }
}

/** Nearest-neighbor 2x upsampling. */
export class Upsample2 implements Layer {
  private inShape: [number, number, number] = [0, 0, 0];

  params(): Param[] {
    return [];
  }

  forward(x: Feature): Feature {
    const y = feature(x.h * 2, x.w * 2, x.c);
    for (let i = 0; i < y.h; i++) {
      const si = i >> 1;
      for (let j = 0; j < y.w; j++) {
        const sj = j >> 1;
        const src = (si * x.w + sj) * x.c;
        y.data.set(x.data.subarray(src, src + x.c), (i * y.w + j) * x.c);
      }
    }
    this.inShape = [x.h, x.w, x.c];
    return y;
  }

  backward(dy: Feature): Feature {
    const [h, w, c] = this.inShape;
    const dx = feature(h, w, c);
    for (let i = 0; i < dy.h; i++) {
      const si = i >> 1;
      for (let j = 0; j < dy.w; j++) {
        const sj = j >> 1;
        const src = (i * dy.w + j) * c;
        const dst = (si * w + sj) * c;
        for (let ch = 0; ch < c; ch++) {
          dx.data[dst + ch] += dy.data[src + ch];
        }
      }
    }
    return dx;
  }
}

export function concatChannels(a: Feature, b: Feature): Feature {
  const c = a.c + b.c;
  const y = feature(a.h, a.w, c);
  const n = a.h * a.w;
  for (let p = 0; p < n; p++) {
    y.data.set(a.data.subarray(p * a.c, (p + 1) * a.c), p * c);
    y.data.set(b.data.subarray(p * b.c, (p + 1) * b.c), p * c + a.c);
  }
  return y;
}

export function splitChannels(dy: Feature, ca: number, cb: number): [Feature, Feature] {
  const da = feature(dy.h, dy.w, ca);
  const db = feature(dy.h, dy.w, cb);
  const n = dy.h * dy.w;
  for (let p = 0; p < n; p++) {
    da.data.set(dy.data.subarray(p * dy.c, p * dy.c + ca), p * ca);
    db.data.set(dy.data.subarray(p * dy.c + ca, (p + 1) * dy.c), p * cb);
  }
  return [da, db];
}

/**
 * Two-level encoder-decoder with skip connections and a 2-logit head.
 * Input sides must be divisible by 4.
 */
export class SmearNet {
  enc1a: Conv3x3;
  enc1b: Conv3x3;
  pool1 = new MaxPool2();
  enc2a: Conv3x3;
  enc2b: Conv3x3;
  pool2 = new MaxPool2();
  mid1: Conv3x3;
  mid2: Conv3x3;
  up2 = new Upsample2();
  dec2: Conv3x3;
  up1 = new Upsample2();
  dec1: Conv3x3;
  head: Conv1x1;

  private skip1: Feature | null = null;
  private skip2: Feature | null = null;

  constructor(public inChannels: number, public base: number, seed = 0) {
    const rng = new Rng(seed + 1);
    const f = base;
    this.enc1a = new Conv3x3("enc1a", inChannels, f, true, rng);
    this.enc1b = new Conv3x3("enc1b", f, f, true, rng);
    this.enc2a = new Conv3x3("enc2a", f, 2 * f, true, rng);
    this.enc2b = new Conv3x3("enc2b", 2 * f, 2 * f, true, rng);
    this.mid1 = new Conv3x3("mid1", 2 * f, 4 * f, true, rng);
    this.mid2 = new Conv3x3("mid2", 4 * f, 4 * f, true, rng);
    this.dec2 = new Conv3x3("dec2", 6 * f, 2 * f, true, rng);
    this.dec1 = new Conv3x3("dec1", 3 * f, f, true, rng);
    this.head = new Conv1x1("head", f, 2, rng);
  }

  params(): Param[] {
    const layers = [
      this.enc1a, this.enc1b, this.enc2a, this.enc2b,
      this.mid1, this.mid2, this.dec2, this.dec1, this.head,
    ];
    return layers.flatMap((l) => l.params());
  }

  /** Logits [h, w, 2]. */
  forward(x: Feature): Feature {
    if (x.h % 4 !== 0 || x.w % 4 !== 0) {
      throw new Error(`input sides must be divisible by 4, got ${x.h}x${x.w}`);
    }
    const s1 = this.enc1b.forward(this.enc1a.forward(x));
    const s2 = this.enc2b.forward(this.enc2a.forward(this.pool1.forward(s1)));
    const mid = this.mid2.forward(this.mid1.forward(this.pool2.forward(s2)));
    const d2 = this.dec2.forward(concatChannels(this.up2.forward(mid), s2));
    const d1 = this.dec1.forward(concatChannels(this.up1.forward(d2), s1));
    this.skip1 = s1;
    this.skip2 = s2;
    return this.head.forward(d1);
  }

  backward(dlogits: Feature): void {
    const f = this.base;
    const dd1 = this.head.backward(dlogits);
    const [dup1, ds1a] = splitChannels(this.dec1.backward(dd1), 2 * f, f);
    const dd2 = this.up1.backward(dup1);
    const [dup2, ds2a] = splitChannels(this.dec2.backward(dd2), 4 * f, 2 * f);
    const dmid = this.up2.backward(dup2);
    const dp2 = this.mid1.backward(this.mid2.backward(dmid));
    const ds2 = this.pool2.backward(dp2);
    for (let i = 0; i < ds2.data.length; i++) ds2.data[i] += ds2a.data[i];
    const dp1 = this.enc2a.backward(this.enc2b.backward(ds2));
    const ds1 = this.pool1.backward(dp1);
    for (let i = 0; i < ds1.data.length; i++) ds1.data[i] += ds1a.data[i];
    this.enc1a.backward(this.enc1b.backward(ds1));
  }

  zeroGrads(): void {
    for (const p of this.params()) p.zeroGrad();
  }
}

/** Smear probability from 2-logit output: softmax channel 1. */
export function probabilityFromLogits(logits: Feature): Float64Array {
  const n = logits.h * logits.w;
  const p = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    const s = logits.data[2 * i + 1] - logits.data[2 * i];
    p[i] = 1 / (1 + Math.exp(-s));
  }
  return p;
}
