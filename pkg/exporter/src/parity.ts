/**
 * Export parity check: evaluates probe images with the exporter's own
 * forward pass and with the fuzzing runtime (via its `fuzz forward` CLI on
 * the written NEF file), and records the worst absolute difference.
 */

import { spawnSync } from 'node:child_process';
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

import { forward } from './forward.js';
import type { NefModel } from './nef.js';
import { encodeNpy } from './npy.js';

export const PARITY_TOLERANCE = 1e-5;

export interface ParityResult {
  probes: number;
  tolerance: number;
  max_abs_diff: number;
  worst_probe: number;
  ok: boolean;
}

/** Deterministic 32-bit PRNG (mulberry32) for probe generation. */
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

export function probeImages(shape: [number, number], count: number, seed = 1234): Float32Array[] {
  const rand = mulberry32(seed);
  const probes: Float32Array[] = [];
  for (let p = 0; p < count; p++) {
    const img = new Float32Array(shape[0] * shape[1]);
    for (let i = 0; i < img.length; i++) img[i] = Math.fround(rand());
    probes.push(img);
  }
  return probes;
}

function fuzzCommand(): string[] {
  const override = process.env.NEF_FUZZ_CMD;
  return override ? override.split(' ') : ['fuzz'];
}

/** Raw outputs from the fuzzing runtime for each probe, via its CLI. */
export function runtimeForward(nefPath: string, probes: Float32Array[], shape: [number, number]): number[][] {
  const dir = mkdtempSync(join(tmpdir(), 'nef-parity-'));
  try {
    const args: string[] = [];
    probes.forEach((probe, i) => {
      const path = join(dir, `probe${String(i).padStart(2, '0')}.npy`);
      writeFileSync(path, encodeNpy(probe, shape));
      args.push('--image', path);
    });
    const outPath = join(dir, 'forward.json');
    const [cmd, ...base] = fuzzCommand();
    const result = spawnSync(cmd, [...base, 'forward', '--model', nefPath, ...args, '--out', outPath], {
      encoding: 'utf-8',
    });
    if (result.error) {
      throw new Error(`cannot run the fuzzing runtime (${cmd}): ${result.error.message}`);
    }
    if (result.status !== 0) {
      throw new Error(`runtime forward failed: ${result.stderr || result.stdout}`);
    }
    const body = JSON.parse(readFileSync(outPath, 'utf-8')) as { outputs: number[][] };
    return body.outputs;
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

export function checkParity(
  model: NefModel,
  nefPath: string,
  probeCount = 16,
  tolerance = PARITY_TOLERANCE,
): ParityResult {
  const probes = probeImages(model.inputShape, probeCount);
  const theirs = runtimeForward(nefPath, probes, model.inputShape);
  let maxDiff = 0;
  let worst = 0;
  probes.forEach((probe, p) => {
    const mine = forward(model, probe);
    if (theirs[p].length !== mine.length) {
      throw new Error(`probe ${p}: runtime returned ${theirs[p].length} outputs, expected ${mine.length}`);
    }
    for (let i = 0; i < mine.length; i++) {
      const diff = Math.abs(mine[i] - theirs[p][i]);
      if (diff > maxDiff) {
        maxDiff = diff;
        worst = p;
      }
    }
  });
  return {
    probes: probeCount,
    tolerance,
    max_abs_diff: maxDiff,
    worst_probe: worst,
    ok: maxDiff <= tolerance,
  };
}
