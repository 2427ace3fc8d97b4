/**
 * NEF container writer.
 *
 * Byte layout: magic "NEF1" | u32-LE header length | UTF-8 JSON header |
 * concatenated float32-LE tensors, row-major, in header order. The JSON
 * header is canonicalized (recursively sorted keys, no whitespace) so the
 * same model always serializes to identical bytes.
 */

export type ActivationFn = 'relu' | 'sigmoid' | 'tanh';

export interface DenseLayer {
  kind: 'dense';
  in_size: number;
  out_size: number;
  weight: Float32Array; // (out, in) row-major
  bias: Float32Array;
}

export interface Conv2dLayer {
  kind: 'conv2d';
  in_channels: number;
  out_channels: number;
  kernel_hw: [number, number];
  padding: number;
  weight: Float32Array; // (out_c, in_c, kh, kw) row-major
  bias: Float32Array;
}

export interface ActivationLayer {
  kind: 'activation';
  fn: ActivationFn;
}

export interface ScaleClampLayer {
  kind: 'scale_clamp';
  lo: number;
  hi: number;
}

export type Layer = DenseLayer | Conv2dLayer | ActivationLayer | ScaleClampLayer;

export interface OutputLayout {
  electrode_count: number;
  params_per_electrode: 1 | 3;
  ordering: 'a' | 'fpa';
  fixed_frequency_hz: number | null;
  fixed_pulse_ms: number | null;
}

export interface NefModel {
  inputShape: [number, number];
  layers: Layer[];
  layout: OutputLayout;
  metadata: Record<string, unknown>;
}

/** JSON.stringify with recursively sorted object keys and no whitespace. */
export function canonicalJson(value: unknown): string {
  if (value === null || typeof value !== 'object') {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return '[' + value.map(canonicalJson).join(',') + ']';
  }
  const entries = Object.entries(value as Record<string, unknown>)
    .filter(([, v]) => v !== undefined)
    .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0));
  return '{' + entries.map(([k, v]) => JSON.stringify(k) + ':' + canonicalJson(v)).join(',') + '}';
}

interface TensorEntry {
  layer: number;
  role: 'weight' | 'bias';
  shape: number[];
}

function layerHeader(layer: Layer): Record<string, unknown> {
  switch (layer.kind) {
    case 'dense':
      return { kind: 'dense', in_size: layer.in_size, out_size: layer.out_size };
    case 'conv2d':
      return {
        kind: 'conv2d',
        in_channels: layer.in_channels,
        out_channels: layer.out_channels,
        kernel_hw: layer.kernel_hw,
        padding: layer.padding,
      };
    case 'activation':
      return { kind: 'activation', fn: layer.fn };
    case 'scale_clamp':
      return { kind: 'scale_clamp', lo: layer.lo, hi: layer.hi };
  }
}

function tensorShape(layer: Layer, role: 'weight' | 'bias'): number[] {
  if (layer.kind === 'dense') {
    return role === 'weight' ? [layer.out_size, layer.in_size] : [layer.out_size];
  }
  if (layer.kind === 'conv2d') {
    return role === 'weight'
      ? [layer.out_channels, layer.in_channels, layer.kernel_hw[0], layer.kernel_hw[1]]
      : [layer.out_channels];
  }
  throw new Error(`layer kind ${layer.kind} carries no tensors`);
}

export function encodeNef(model: NefModel): Buffer {
  const table: TensorEntry[] = [];
  const tensors: Float32Array[] = [];
  model.layers.forEach((layer, index) => {
    if (layer.kind !== 'dense' && layer.kind !== 'conv2d') return;
    for (const role of ['weight', 'bias'] as const) {
      const data = layer[role];
      const shape = tensorShape(layer, role);
      const expected = shape.reduce((a, b) => a * b, 1);
      if (data.length !== expected) {
        throw new Error(
          `layer ${index} (${layer.kind}): ${role} has ${data.length} values, shape needs ${expected}`,
        );
      }
      table.push({ layer: index, role, shape });
      tensors.push(data);
    }
  });

  const header = {
    input_shape: model.inputShape,
    layers: model.layers.map(layerHeader),
    layout: model.layout,
    metadata: model.metadata,
    tensors: table,
  };
  const headerBytes = Buffer.from(canonicalJson(header), 'utf-8');
  const blobLength = tensors.reduce((a, t) => a + t.length * 4, 0);
  const out = Buffer.alloc(8 + headerBytes.length + blobLength);
  out.write('NEF1', 0, 'ascii');
  out.writeUInt32LE(headerBytes.length, 4);
  headerBytes.copy(out, 8);
  let offset = 8 + headerBytes.length;
  for (const tensor of tensors) {
    for (let i = 0; i < tensor.length; i++) {
      out.writeFloatLE(tensor[i], offset);
      offset += 4;
    }
  }
  return out;
}
