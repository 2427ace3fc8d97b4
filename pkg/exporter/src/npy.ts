/** Writer for .npy v1.0 float32 grids; the fuzzing runtime ingests these as
 * exact (unquantized) probe images. */

export function encodeNpy(data: Float32Array, shape: [number, number]): Buffer {
  const [h, w] = shape;
  if (data.length !== h * w) {
    throw new Error(`data length ${data.length} does not match shape ${h}x${w}`);
  }
  let header = `{'descr': '<f4', 'fortran_order': False, 'shape': (${h}, ${w}), }`;
  // total header (magic + version + length field + text) padded to 64 bytes
  const unpadded = 10 + header.length + 1;
  header = header + ' '.repeat((64 - (unpadded % 64)) % 64) + '\n';
  const out = Buffer.alloc(10 + header.length + data.length * 4);
  out.write('\x93NUMPY', 0, 'latin1');
  out.writeUInt8(1, 6); // major version
  out.writeUInt8(0, 7);
  out.writeUInt16LE(header.length, 8);
  out.write(header, 10, 'latin1');
  for (let i = 0; i < data.length; i++) {
    out.writeFloatLE(data[i], 10 + header.length + i * 4);
  }
  return out;
}
