/** Raster geometry shared with the exporter: center-square crop followed by
 * nearest-neighbor resampling, plus the normal-view (omega) computation for
 * raw depth frames. */

export interface CameraIntrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

export interface CropBox {
  x0: number;
  y0: number;
  width: number;
  height: number;
}

export function centerCropBox(width: number, height: number): CropBox {
  const side = Math.min(width, height);
  return { x0: (width - side) >> 1, y0: (height - side) >> 1, width: side, height: side };
}

export function nearestIndices(src: number, dst: number): Int32Array {
  const out = new Int32Array(dst);
  for (let i = 0; i < dst; i++) {
    out[i] = Math.min(Math.floor(((i + 0.5) * src) / dst), src - 1);
  }
  return out;
}

/** Crop to the centered square, then nearest-neighbor resample to size^2. */
export function resampleNearest<T extends Float64Array | Uint16Array | Uint8Array>(
  data: T, width: number, height: number, size: number,
  makeOut: (n: number) => T,
): T {
  const box = centerCropBox(width, height);
  const iy = nearestIndices(box.height, size);
  const ix = nearestIndices(box.width, size);
  const out = makeOut(size * size);
  for (let y = 0; y < size; y++) {
    const srcRow = (box.y0 + iy[y]) * width + box.x0;
    for (let x = 0; x < size; x++) {
      out[y * size + x] = data[srcRow + ix[x]];
    }
  }
  return out;
}

/** Map per-pixel values at the resampled scale back onto the native raster.
 * Pixels outside the center crop get fill. */
export function unresampleNearest(
  values: Float64Array, size: number, width: number, height: number, fill = 0,
): Float64Array {
  const box = centerCropBox(width, height);
  const out = new Float64Array(width * height).fill(fill);
  for (let y = 0; y < box.height; y++) {
    const sy = Math.min(Math.floor(((y + 0.5) * size) / box.height), size - 1);
    for (let x = 0; x < box.width; x++) {
      const sx = Math.min(Math.floor(((x + 0.5) * size) / box.width), size - 1);
      out[(box.y0 + y) * width + box.x0 + x] = values[sy * size + sx];
    }
  }
  return out;
}

/**
 * |cos| between the viewing ray and the facet normal per pixel, zero where
 * depth or any 4-neighbor is missing. Facet normals come from central
 * differences of backprojected points, matching the exporter's omega maps.
 */
export function omegaFromDepth(depth: Uint16Array, cam: CameraIntrinsics): Float64Array {
  const { width: w, height: h } = cam;
  const px = new Float64Array(w * h);
  const py = new Float64Array(w * h);
  const pz = new Float64Array(w * h);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const d = depth[y * w + x];
      px[y * w + x] = ((x - cam.cx) * d) / cam.fx;
      py[y * w + x] = ((y - cam.cy) * d) / cam.fy;
      pz[y * w + x] = d;
    }
  }
  const omega = new Float64Array(w * h);
  for (let y = 1; y < h - 1; y++) {
    for (let x = 1; x < w - 1; x++) {
      const i = y * w + x;
      if (
        depth[i] === 0 || depth[i - 1] === 0 || depth[i + 1] === 0 ||
        depth[i - w] === 0 || depth[i + w] === 0
      ) {
        continue;
      }
      const dux = px[i + 1] - px[i - 1];
      const duy = py[i + 1] - py[i - 1];
      const duz = pz[i + 1] - pz[i - 1];
      const dvx = px[i + w] - px[i - w];
      const dvy = py[i + w] - py[i - w];
      const dvz = pz[i + w] - pz[i - w];
      const nx = duy * dvz - duz * dvy;
      const ny = duz * dvx - dux * dvz;
      const nz = dux * dvy - duy * dvx;
      const nn = Math.hypot(nx, ny, nz);
      const pn = Math.hypot(px[i], py[i], pz[i]);
      if (nn === 0 || pn === 0) continue;
      const dot = Math.abs(nx * px[i] + ny * py[i] + nz * pz[i]) / (nn * pn);
      omega[i] = Math.min(dot, 1);
    }
  }
  return omega;
}
