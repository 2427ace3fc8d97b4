/**
 * Minimal safetensors reader/writer: u64-LE header length, JSON header
 * mapping tensor names to {dtype, shape, data_offsets}, then the raw data
 * buffer. Only F32 and F64 tensors are supported (F64 is converted).
 */

export interface TensorRecord {
  dtype: 'F32' | 'F64';
  shape: number[];
  data: Float32Array;
}

export type TensorMap = Map<string, TensorRecord>;

interface HeaderEntry {
  dtype: string;
  shape: number[];
  data_offsets: [number, number];
}

export function readSafetensors(buffer: Buffer): TensorMap {
  if (buffer.length < 8) {
    throw new Error('not a safetensors file: too short');
  }
  const headerLength = Number(buffer.readBigUInt64LE(0));
  if (8 + headerLength > buffer.length) {
    throw new Error('not a safetensors file: header length exceeds file size');
  }
  const header = JSON.parse(buffer.subarray(8, 8 + headerLength).toString('utf-8')) as Record<
    string,
    HeaderEntry
  >;
  const data = buffer.subarray(8 + headerLength);
  const tensors: TensorMap = new Map();
  for (const [name, entry] of Object.entries(header)) {
    if (name === '__metadata__') continue;
    const count = entry.shape.reduce((a, b) => a * b, 1);
    const [begin, end] = entry.data_offsets;
    if (entry.dtype === 'F32') {
      if (end - begin !== count * 4) {
        throw new Error(`tensor ${name}: data span does not match shape`);
      }
      const values = new Float32Array(count);
      for (let i = 0; i < count; i++) values[i] = data.readFloatLE(begin + i * 4);
      tensors.set(name, { dtype: 'F32', shape: entry.shape, data: values });
    } else if (entry.dtype === 'F64') {
      if (end - begin !== count * 8) {
        throw new Error(`tensor ${name}: data span does not match shape`);
      }
      const values = new Float32Array(count);
      for (let i = 0; i < count; i++) {
        values[i] = Math.fround(data.readDoubleLE(begin + i * 8));
      }
      tensors.set(name, { dtype: 'F64', shape: entry.shape, data: values });
    } else {
      throw new Error(`tensor ${name}: unsupported dtype ${entry.dtype} (need F32/F64)`);
    }
  }
  return tensors;
}

export function writeSafetensors(tensors: Map<string, { shape: number[]; data: Float32Array }>): Buffer {
  const header: Record<string, HeaderEntry> = {};
  let offset = 0;
  const ordered = [...tensors.entries()];
  for (const [name, t] of ordered) {
    const bytes = t.data.length * 4;
    header[name] = { dtype: 'F32', shape: t.shape, data_offsets: [offset, offset + bytes] };
    offset += bytes;
  }
  const headerBytes = Buffer.from(JSON.stringify(header), 'utf-8');
  const out = Buffer.alloc(8 + headerBytes.length + offset);
  out.writeBigUInt64LE(BigInt(headerBytes.length), 0);
  headerBytes.copy(out, 8);
  let cursor = 8 + headerBytes.length;
  for (const [, t] of ordered) {
    for (let i = 0; i < t.data.length; i++) {
      out.writeFloatLE(t.data[i], cursor);
      cursor += 4;
    }
  }
  return out;
}
