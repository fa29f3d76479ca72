/**
 * Minimal UCKP named-tensor writer, byte-compatible with the engine's
 * checkpoint reader. Used to export encoder projection weights.
 *
 * Layout (little-endian):
 *   "UCKP" | version u32 (=1) | count u32
 *   | per tensor: name (u16 + UTF-8) | rank u8 | rank*u32 dims | float32 data
 */

export interface NamedTensor {
  name: string;
  dims: number[];
  data: Float32Array;
}

const MAGIC = 0x504b4355; // "UCKP" read as LE u32
const VERSION = 1;

export function encodeUckp(tensors: NamedTensor[]): Buffer {
  const names = new Set<string>();
  let size = 12;
  for (const t of tensors) {
    if (names.has(t.name)) throw new Error(`duplicate tensor name ${JSON.stringify(t.name)}`);
    names.add(t.name);
    const want = t.dims.reduce((a, b) => a * b, 1);
    if (t.dims.some((d) => d <= 0)) throw new Error(`tensor ${t.name} has a non-positive dim`);
    if (want !== t.data.length) {
      throw new Error(`tensor ${t.name}: dims ${t.dims} need ${want} values, got ${t.data.length}`);
    }
    size += 2 + Buffer.byteLength(t.name, "utf-8") + 1 + 4 * t.dims.length + 4 * t.data.length;
  }
  const out = Buffer.alloc(size);
  let off = 0;
  off = out.writeUInt32LE(MAGIC, off);
  off = out.writeUInt32LE(VERSION, off);
  off = out.writeUInt32LE(tensors.length, off);
  for (const t of tensors) {
    const raw = Buffer.from(t.name, "utf-8");
    off = out.writeUInt16LE(raw.length, off);
    off += raw.copy(out, off);
    off = out.writeUInt8(t.dims.length, off);
    for (const d of t.dims) off = out.writeUInt32LE(d, off);
    for (let i = 0; i < t.data.length; i++) off = out.writeFloatLE(t.data[i], off);
  }
  return out;
}
