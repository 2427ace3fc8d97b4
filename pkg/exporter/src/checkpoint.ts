/**
 * Builds a NEF model from a checkpoint (safetensors tensor map) plus a
 * layout description JSON naming the architecture and the tensor mapping.
 */

import type { Layer, NefModel, OutputLayout } from './nef.js';
import type { TensorMap } from './safetensors.js';

const SUPPORTED = new Set(['dense', 'conv2d', 'activation', 'scale_clamp']);
const ACTIVATIONS = new Set(['relu', 'sigmoid', 'tanh']);

export interface LayerDescription {
  kind: string;
  weight?: string; // tensor name in the checkpoint
  bias?: string;
  in_size?: number;
  out_size?: number;
  in_channels?: number;
  out_channels?: number;
  kernel_hw?: [number, number];
  padding?: number;
  fn?: string;
  lo?: number;
  hi?: number;
}

export interface LayoutDescription {
  input_shape: [number, number];
  layers: LayerDescription[];
  layout: OutputLayout;
  metadata?: Record<string, unknown>;
}

export class ExportError extends Error {}

function getTensor(
  tensors: TensorMap,
  name: string | undefined,
  index: number,
  role: string,
  expected: number[],
): Float32Array {
  if (!name) {
    throw new ExportError(`layer ${index}: missing ${role} tensor name`);
  }
  const record = tensors.get(name);
  if (!record) {
    throw new ExportError(`layer ${index}: checkpoint has no tensor named '${name}'`);
  }
  const wantCount = expected.reduce((a, b) => a * b, 1);
  if (record.data.length !== wantCount) {
    throw new ExportError(
      `layer ${index}: tensor '${name}' has shape [${record.shape}] but the ` +
        `layer needs [${expected}]`,
    );
  }
  return record.data;
}

export function buildModel(tensors: TensorMap, description: LayoutDescription): NefModel {
  const layers: Layer[] = [];
  description.layers.forEach((entry, index) => {
    if (!SUPPORTED.has(entry.kind)) {
      throw new ExportError(
        `layer ${index}: unsupported layer kind '${entry.kind}' ` +
          `(supported: ${[...SUPPORTED].join(', ')})`,
      );
    }
    if (entry.kind === 'dense') {
      const inSize = entry.in_size ?? 0;
      const outSize = entry.out_size ?? 0;
      if (inSize < 1 || outSize < 1) {
        throw new ExportError(`layer ${index}: dense needs in_size/out_size`);
      }
      layers.push({
        kind: 'dense',
        in_size: inSize,
        out_size: outSize,
        weight: getTensor(tensors, entry.weight, index, 'weight', [outSize, inSize]),
        bias: getTensor(tensors, entry.bias, index, 'bias', [outSize]),
      });
    } else if (entry.kind === 'conv2d') {
      const ic = entry.in_channels ?? 0;
      const oc = entry.out_channels ?? 0;
      const kernel = entry.kernel_hw;
      if (ic < 1 || oc < 1 || !kernel) {
        throw new ExportError(`layer ${index}: conv2d needs channels and kernel_hw`);
      }
      layers.push({
        kind: 'conv2d',
        in_channels: ic,
        out_channels: oc,
        kernel_hw: kernel,
        padding: entry.padding ?? 0,
        weight: getTensor(tensors, entry.weight, index, 'weight', [oc, ic, kernel[0], kernel[1]]),
        bias: getTensor(tensors, entry.bias, index, 'bias', [oc]),
      });
    } else if (entry.kind === 'activation') {
      if (!entry.fn || !ACTIVATIONS.has(entry.fn)) {
        throw new ExportError(`layer ${index}: unknown activation fn '${entry.fn}'`);
      }
      layers.push({ kind: 'activation', fn: entry.fn as 'relu' | 'sigmoid' | 'tanh' });
    } else {
      if (entry.lo === undefined || entry.hi === undefined || entry.lo > entry.hi) {
        throw new ExportError(`layer ${index}: scale_clamp needs lo <= hi`);
      }
      layers.push({ kind: 'scale_clamp', lo: entry.lo, hi: entry.hi });
    }
  });
  if (layers.length === 0) {
    throw new ExportError('layout describes no layers');
  }
  return {
    inputShape: description.input_shape,
    layers,
    layout: normalizeLayout(description.layout),
    metadata: description.metadata ?? {},
  };
}

function normalizeLayout(layout: OutputLayout): OutputLayout {
  const ordering = layout.params_per_electrode === 1 ? 'a' : 'fpa';
  return {
    electrode_count: layout.electrode_count,
    params_per_electrode: layout.params_per_electrode,
    ordering,
    fixed_frequency_hz: layout.fixed_frequency_hz ?? null,
    fixed_pulse_ms: layout.fixed_pulse_ms ?? null,
  };
}
