/**
 * Reference forward pass over exporter-side models, mirroring the runtime's
 * precision contract: values live in float32 (Math.fround), dot products
 * accumulate in float64 and round once at the end.
 */

import type { Layer, NefModel } from './nef.js';

function applyDense(
  weight: Float32Array,
  bias: Float32Array,
  outSize: number,
  inSize: number,
  x: Float32Array,
): Float32Array {
  if (x.length !== inSize) {
    throw new Error(`dense layer expects ${inSize} inputs, got ${x.length}`);
  }
  const y = new Float32Array(outSize);
  for (let o = 0; o < outSize; o++) {
    let acc = 0;
    const row = o * inSize;
    for (let i = 0; i < inSize; i++) {
      acc += weight[row + i] * x[i];
    }
    y[o] = Math.fround(acc + bias[o]);
  }
  return y;
}

interface Spatial {
  channels: number;
  height: number;
  width: number;
  data: Float32Array; // (c, h, w) row-major
}

function applyConv2d(
  layer: Extract<Layer, { kind: 'conv2d' }>,
  x: Spatial,
): Spatial {
  const { in_channels: ic, out_channels: oc, padding: pad } = layer;
  const [kh, kw] = layer.kernel_hw;
  if (x.channels !== ic) {
    throw new Error(`conv2d expects ${ic} channels, got ${x.channels}`);
  }
  const oh = x.height + 2 * pad - kh + 1;
  const ow = x.width + 2 * pad - kw + 1;
  if (oh < 1 || ow < 1) {
    throw new Error('conv2d kernel larger than padded input');
  }
  const out = new Float32Array(oc * oh * ow);
  for (let o = 0; o < oc; o++) {
    for (let r = 0; r < oh; r++) {
      for (let col = 0; col < ow; col++) {
        let acc = 0;
        for (let c = 0; c < ic; c++) {
          for (let u = 0; u < kh; u++) {
            const sr = r + u - pad;
            if (sr < 0 || sr >= x.height) continue;
            for (let v = 0; v < kw; v++) {
              const sc = col + v - pad;
              if (sc < 0 || sc >= x.width) continue;
              acc +=
                layer.weight[((o * ic + c) * kh + u) * kw + v] *
                x.data[(c * x.height + sr) * x.width + sc];
            }
          }
        }
        out[(o * oh + r) * ow + col] = Math.fround(acc + layer.bias[o]);
      }
    }
  }
  return { channels: oc, height: oh, width: ow, data: out };
}

function applyElementwise(layer: Layer, x: Float32Array): Float32Array {
  const y = new Float32Array(x.length);
  if (layer.kind === 'activation') {
    for (let i = 0; i < x.length; i++) {
      if (layer.fn === 'relu') y[i] = x[i] > 0 ? x[i] : 0;
      else if (layer.fn === 'sigmoid') y[i] = Math.fround(1 / (1 + Math.exp(-x[i])));
      else y[i] = Math.fround(Math.tanh(x[i]));
    }
    return y;
  }
  if (layer.kind === 'scale_clamp') {
    const lo = Math.fround(layer.lo);
    const hi = Math.fround(layer.hi);
    for (let i = 0; i < x.length; i++) {
      y[i] = Math.min(Math.max(x[i], lo), hi);
    }
    return y;
  }
  throw new Error(`not an elementwise layer: ${layer.kind}`);
}

/** Evaluate the model on a row-major [0,1] image of shape inputShape. */
export function forward(model: NefModel, image: Float32Array): Float32Array {
  const [h, w] = model.inputShape;
  if (image.length !== h * w) {
    throw new Error(`image has ${image.length} pixels, model expects ${h * w}`);
  }
  let spatial: Spatial | null = { channels: 1, height: h, width: w, data: image };
  let flat: Float32Array = image;
  for (const layer of model.layers) {
    if (layer.kind === 'dense') {
      flat = applyDense(layer.weight, layer.bias, layer.out_size, layer.in_size, flat);
      spatial = null;
    } else if (layer.kind === 'conv2d') {
      if (spatial === null) {
        throw new Error('conv2d after a dense layer is not supported');
      }
      spatial = applyConv2d(layer, spatial);
      flat = spatial.data;
    } else {
      flat = applyElementwise(layer, flat);
      if (spatial !== null) {
        spatial = { ...spatial, data: flat };
      }
    }
    for (let i = 0; i < flat.length; i++) {
      if (!Number.isFinite(flat[i])) {
        throw new Error(`non-finite value in layer output (${layer.kind})`);
      }
    }
  }
  return flat;
}
