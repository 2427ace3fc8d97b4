#!/usr/bin/env node
/**
 * nef-export: convert a safetensors checkpoint plus a layout description
 * into a NEF container, verifying forward parity against the fuzzing
 * runtime (16 probe images, 1e-5 absolute). Writes <out>.manifest.json.
 *
 * nef-synth: generate a planted-violation fixture encoder from a spec
 * JSON; writes <out> plus <out>.analysis.json with the closed-form map.
 *
 * Both commands are deterministic: the same inputs produce byte-identical
 * NEF files.
 */

import { createHash } from 'node:crypto';
import { readFileSync, writeFileSync } from 'node:fs';
import { basename } from 'node:path';

import { buildModel, ExportError, type LayoutDescription } from './checkpoint.js';
import { encodeNef } from './nef.js';
import { checkParity } from './parity.js';
import { readSafetensors } from './safetensors.js';
import { synthFixture, type SynthSpec } from './synth.js';

function parseArgs(argv: string[], flags: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!flags.includes(key) || i + 1 >= argv.length) {
      throw new ExportError(`usage error near '${key}' (expected flags: ${flags.join(', ')})`);
    }
    out.set(key, argv[i + 1]);
  }
  return out;
}

function runExport(argv: string[]): number {
  const args = parseArgs(argv, ['--checkpoint', '--layout', '--out', '--probes']);
  const checkpointPath = args.get('--checkpoint');
  const layoutPath = args.get('--layout');
  const outPath = args.get('--out');
  if (!checkpointPath || !layoutPath || !outPath) {
    throw new ExportError('nef-export needs --checkpoint <path> --layout <json> --out <nef>');
  }
  const checkpointBytes = readFileSync(checkpointPath);
  const tensors = readSafetensors(checkpointBytes);
  const description = JSON.parse(readFileSync(layoutPath, 'utf-8')) as LayoutDescription;
  const model = buildModel(tensors, description);
  const nef = encodeNef(model);
  writeFileSync(outPath, nef);

  const probes = Number(args.get('--probes') ?? 16);
  const parity = checkParity(model, outPath, probes);
  const manifest = {
    source: {
      checkpoint: basename(checkpointPath),
      sha256: createHash('sha256').update(checkpointBytes).digest('hex'),
    },
    layers: description.layers.map((layer, index) => ({
      index,
      kind: layer.kind,
      weight: layer.weight ?? null,
      bias: layer.bias ?? null,
    })),
    nef: { path: basename(outPath), bytes: nef.length,
           sha256: createHash('sha256').update(nef).digest('hex') },
    parity,
    status: parity.ok ? 'ok' : 'failed',
  };
  writeFileSync(outPath + '.manifest.json', JSON.stringify(manifest, null, 2) + '\n');
  if (!parity.ok) {
    console.error(
      `parity FAILED: max |diff| ${parity.max_abs_diff} on probe ${parity.worst_probe} ` +
        `(tolerance ${parity.tolerance})`,
    );
    return 1;
  }
  console.log(`wrote ${outPath} (${nef.length} bytes), parity max |diff| ${parity.max_abs_diff}`);
  return 0;
}

function runSynth(argv: string[]): number {
  const args = parseArgs(argv, ['--spec', '--seed', '--out']);
  const specPath = args.get('--spec');
  const outPath = args.get('--out');
  if (!specPath || !outPath) {
    throw new ExportError('nef-synth needs --spec <json> --seed <u64> --out <nef>');
  }
  const seed = Number(args.get('--seed') ?? 1);
  const spec = JSON.parse(readFileSync(specPath, 'utf-8')) as SynthSpec;
  const { model, analysis } = synthFixture(spec, seed);
  const nef = encodeNef(model);
  writeFileSync(outPath, nef);
  writeFileSync(outPath + '.analysis.json', JSON.stringify(analysis, null, 2) + '\n');
  console.log(`wrote ${outPath} (${nef.length} bytes) and ${outPath}.analysis.json`);
  return 0;
}

export function main(argv = process.argv): number {
  const invoked = basename(argv[1] ?? '');
  let command = invoked.includes('synth') ? 'synth' : invoked.includes('export') ? 'export' : '';
  let rest = argv.slice(2);
  if (!command) {
    command = rest[0] ?? '';
    rest = rest.slice(1);
  }
  try {
    if (command === 'export') return runExport(rest);
    if (command === 'synth') return runSynth(rest);
    console.error('usage: nef-export --checkpoint <path> --layout <json> --out <nef>\n' +
                  '       nef-synth --spec <json> --seed <u64> --out <nef>');
    return 2;
  } catch (error) {
    console.error(String(error instanceof Error ? error.message : error));
    return error instanceof ExportError ? 2 : 1;
  }
}

const entry = process.argv[1] ?? '';
if (entry.endsWith('cli.js') || entry.endsWith('nef-export') || entry.endsWith('nef-synth')) {
  process.exit(main());
}
