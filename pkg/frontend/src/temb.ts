/**
 * Parser for TEMB text-embedding files so prompts can be uploaded without a
 * configured encoder bridge.
 *
 * Layout (little-endian): magic "TEMB" | version u32 | dim u32 |
 * label (u16 length + UTF-8) | dim x f32 | CRC32(payload) u32.
 */

export interface TextEmbedding {
  label: string;
  vector: number[];
}

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]!) & 0xff]! ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

export function parseTemb(buffer: ArrayBuffer): TextEmbedding {
  const view = new DataView(buffer);
  const bytes = new Uint8Array(buffer);
  if (buffer.byteLength < 14) {
    throw new Error("TEMB file truncated");
  }
  const magic = String.fromCharCode(bytes[0]!, bytes[1]!, bytes[2]!, bytes[3]!);
  if (magic !== "TEMB") {
    throw new Error(`bad magic ${JSON.stringify(magic)}, expected TEMB`);
  }
  const version = view.getUint32(4, true);
  if (version !== 1) {
    throw new Error(`unsupported TEMB version ${version}`);
  }
  const dim = view.getUint32(8, true);
  if (dim < 1) {
    throw new Error("TEMB header declares dim=0");
  }
  const labelLen = view.getUint16(12, true);
  let offset = 14;
  if (buffer.byteLength < offset + labelLen + dim * 4 + 4) {
    throw new Error("TEMB file truncated");
  }
  const label = new TextDecoder().decode(bytes.subarray(offset, offset + labelLen));
  offset += labelLen;

  const payload = bytes.subarray(offset, offset + dim * 4);
  const vector: number[] = new Array(dim);
  for (let i = 0; i < dim; i++) {
    vector[i] = view.getFloat32(offset + i * 4, true);
  }
  offset += dim * 4;
  const stored = view.getUint32(offset, true);
  if (crc32(payload) !== stored) {
    throw new Error("TEMB payload CRC mismatch");
  }
  return { label, vector };
}
