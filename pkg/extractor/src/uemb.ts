/**
 * UEMB embedding-set container, byte-compatible with the retrieval engine.
 *
 * Layout (little-endian):
 *   "UEMB" | version u32 (=1) | n u64 | d u32 | flags u32 (bit 0 = normalized)
 *   | n*d float32 row-major | n id records (u16 byte length + UTF-8)
 */

export interface EmbeddingSet {
  ids: string[];
  dim: number;
  /** row-major, length ids.length * dim */
  data: Float32Array;
  normalized: boolean;
}

const MAGIC = 0x424d4555; // "UEMB" read as LE u32
const VERSION = 1;
const NORM_TOL = 1e-4;

export class UembError extends Error {}

function checkSet(set: EmbeddingSet): void {
  const n = set.ids.length;
  if (set.dim <= 0) throw new UembError("dimension must be positive (d=0 is illegal)");
  if (set.data.length !== n * set.dim) {
    throw new UembError(`data length ${set.data.length} is not n*d = ${n * set.dim}`);
  }
  const seen = new Set<string>();
  for (const id of set.ids) {
    if (seen.has(id)) throw new UembError(`duplicate id ${JSON.stringify(id)}`);
    seen.add(id);
  }
  for (let i = 0; i < set.data.length; i++) {
    if (!Number.isFinite(set.data[i])) {
      throw new UembError(`non-finite value at row ${Math.floor(i / set.dim)}`);
    }
  }
  if (set.normalized) {
    for (let r = 0; r < n; r++) {
      let sq = 0;
      for (let c = 0; c < set.dim; c++) {
        const v = set.data[r * set.dim + c];
        sq += v * v;
      }
      if (Math.abs(Math.sqrt(sq) - 1.0) > NORM_TOL) {
        throw new UembError(`normalized flag set but row ${r} has norm ${Math.sqrt(sq)}`);
      }
    }
  }
}

export function encodeUemb(set: EmbeddingSet): Buffer {
  checkSet(set);
  const n = set.ids.length;
  const idBufs = set.ids.map((id) => {
    const raw = Buffer.from(id, "utf-8");
    if (raw.length > 0xffff) throw new UembError(`id exceeds 65535 UTF-8 bytes`);
    return raw;
  });
  const idBytes = idBufs.reduce((acc, b) => acc + 2 + b.length, 0);
  const out = Buffer.alloc(24 + 4 * n * set.dim + idBytes);
  let off = 0;
  off = out.writeUInt32LE(MAGIC, off);
  off = out.writeUInt32LE(VERSION, off);
  off = out.writeBigUInt64LE(BigInt(n), off);
  off = out.writeUInt32LE(set.dim, off);
  off = out.writeUInt32LE(set.normalized ? 1 : 0, off);
  for (let i = 0; i < set.data.length; i++) {
    off = out.writeFloatLE(set.data[i], off);
  }
  for (const raw of idBufs) {
    off = out.writeUInt16LE(raw.length, off);
    off += raw.copy(out, off);
  }
  return out;
}

export function decodeUemb(buf: Buffer): EmbeddingSet {
  if (buf.length < 24) throw new UembError(`truncated payload at offset 0: header needs 24 bytes`);
  if (buf.readUInt32LE(0) !== MAGIC) throw new UembError("bad magic at offset 0");
  const version = buf.readUInt32LE(4);
  if (version !== VERSION) throw new UembError(`unsupported version ${version} at offset 4`);
  const n = Number(buf.readBigUInt64LE(8));
  const dim = buf.readUInt32LE(16);
  const flags = buf.readUInt32LE(20);
  if (dim === 0) throw new UembError("dimension 0 at offset 16");
  if ((flags & ~1) !== 0) throw new UembError(`unknown flag bits at offset 20`);

  let off = 24;
  if (buf.length < off + 4 * n * dim) {
    throw new UembError(`truncated payload at offset ${off}: float matrix incomplete`);
  }
  const data = new Float32Array(n * dim);
  for (let i = 0; i < data.length; i++, off += 4) data[i] = buf.readFloatLE(off);

  const ids: string[] = [];
  const seen = new Set<string>();
  for (let i = 0; i < n; i++) {
    if (buf.length < off + 2) throw new UembError(`truncated payload at offset ${off}: id length ${i}`);
    const len = buf.readUInt16LE(off);
    off += 2;
    if (buf.length < off + len) throw new UembError(`truncated payload at offset ${off}: id bytes ${i}`);
    const id = buf.subarray(off, off + len).toString("utf-8");
    off += len;
    if (seen.has(id)) throw new UembError(`duplicate id ${JSON.stringify(id)} at offset ${off - len - 2}`);
    seen.add(id);
    ids.push(id);
  }
  if (off !== buf.length) throw new UembError(`declared length mismatch: trailing bytes at offset ${off}`);
  const set = { ids, dim, data, normalized: (flags & 1) === 1 };
  checkSet(set);
  return set;
}
