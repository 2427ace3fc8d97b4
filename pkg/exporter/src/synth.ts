/**
 * Synthetic fixture encoders with planted violations.
 *
 * The generated models keep the input-to-output map analytic: every
 * amplitude is (gain_i / pixel_count) * sum(pixels) = gain_i * mean(x), so
 * the brightness at which each safety limit is crossed follows in closed
 * form and is written to a companion analysis JSON for oracle use.
 */

import type { DenseLayer, NefModel } from './nef.js';

export interface SynthSpec {
  layout: 'retinal-tiny' | 'cortical-tiny';
  input_hw?: [number, number];
  amplitude_gain?: number; // uA per unit mean brightness (before jitter)
  gain_jitter?: number; // +- fraction applied per electrode, seeded
  frequency_hz?: number; // constant frequency output / fixed layout value
  pulse_ms?: number; // constant pulse output / fixed layout value
}

export interface SynthResult {
  model: NefModel;
  analysis: Record<string, unknown>;
}

const LIMITS = {
  'retinal-tiny': { charge_limit_nc: 628.0, current_limit_ua: 6000.0, active_limit: 100, electrodes: 225 },
  'cortical-tiny': { charge_limit_nc: 20.4, current_limit_ua: 3600.0, active_limit: 30, electrodes: 60 },
} as const;

function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function synthFixture(spec: SynthSpec, seed: number): SynthResult {
  if (!(spec.layout in LIMITS)) {
    throw new Error(`unknown fixture layout '${spec.layout}'`);
  }
  const limits = LIMITS[spec.layout];
  const [h, w] = spec.input_hw ?? [16, 16];
  const pixels = h * w;
  const n = limits.electrodes;
  const gain = spec.amplitude_gain ?? 700.0;
  const jitter = spec.gain_jitter ?? 0.0;
  const freq = spec.frequency_hz ?? 120.0;
  const pulse = spec.pulse_ms ?? 1.0;

  const rand = mulberry32(seed);
  const gains = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    gains[i] = gain * (1 + jitter * (2 * rand() - 1));
  }

  const triple = spec.layout === 'retinal-tiny';
  const outSize = triple ? 3 * n : n;
  const weight = new Float32Array(outSize * pixels);
  const bias = new Float32Array(outSize);
  const ampRow = triple ? 2 * n : 0;
  for (let i = 0; i < n; i++) {
    const coeff = Math.fround(gains[i] / pixels);
    const row = (ampRow + i) * pixels;
    for (let j = 0; j < pixels; j++) weight[row + j] = coeff;
  }
  if (triple) {
    for (let i = 0; i < n; i++) {
      bias[i] = Math.fround(freq);
      bias[n + i] = Math.fround(pulse);
    }
  }

  const dense: DenseLayer = { kind: 'dense', in_size: pixels, out_size: outSize, weight, bias };
  const model: NefModel = {
    inputShape: [h, w],
    layers: [dense],
    layout: triple
      ? {
          electrode_count: n,
          params_per_electrode: 3,
          ordering: 'fpa',
          fixed_frequency_hz: null,
          fixed_pulse_ms: null,
        }
      : {
          electrode_count: n,
          params_per_electrode: 1,
          ordering: 'a',
          fixed_frequency_hz: freq,
          fixed_pulse_ms: pulse,
        },
    metadata: { fixture: spec.layout, generator: 'nef-synth', seed },
  };

  const maxGain = Math.max(...gains);
  const sumGain = gains.reduce((a, b) => a + b, 0);
  const analysis = {
    layout: spec.layout,
    seed,
    map: {
      amplitude_ua: 'gain_i * mean(pixels)',
      frequency_hz: freq,
      pulse_ms: pulse,
      gains: [...gains],
    },
    assumed_limits: {
      charge_limit_nc: limits.charge_limit_nc,
      current_limit_ua: limits.current_limit_ua,
      active_limit: limits.active_limit,
    },
    brightness_cross: {
      // charge: pulse * gain_i * b > limit at the hottest electrode
      CD: limits.charge_limit_nc / (pulse * maxGain),
      // total current: sum_i gain_i * b > limit
      IC: limits.current_limit_ua / sumGain,
      // every electrode activates for any b > 0, so AE flips immediately
      // when the electrode count exceeds the limit
      AE: n > limits.active_limit ? 0.0 : null,
    },
  };
  return { model, analysis };
}
