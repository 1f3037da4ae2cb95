/**
 * FVS1 binary feature-shard format, shared with the Python classifier:
 * little-endian, magic "FVS1", u32 K, u32 N, then N records of
 * [u32 label][K x f32 values].
 */

export interface ShardRecord {
  label: number
  values: Float64Array
}

export const SHARD_MAGIC = 'FVS1'

export function encodeShard(k: number, records: ShardRecord[]): Buffer {
  if (k < 1) throw new Error(`K must be >= 1, got ${k}`)
  const recordBytes = 4 + 4 * k
  const buf = Buffer.alloc(12 + records.length * recordBytes)
  buf.write(SHARD_MAGIC, 0, 'ascii')
  buf.writeUInt32LE(k, 4)
  buf.writeUInt32LE(records.length, 8)
  let off = 12
  for (const rec of records) {
    if (rec.values.length !== k) {
      throw new Error(`record has ${rec.values.length} values, expected ${k}`)
    }
    buf.writeUInt32LE(rec.label >>> 0, off)
    off += 4
    for (let i = 0; i < k; i++) {
      buf.writeFloatLE(rec.values[i], off)
      off += 4
    }
  }
  return buf
}

export function decodeShard(buf: Buffer): { k: number; records: ShardRecord[] } {
  if (buf.length < 12 || buf.toString('ascii', 0, 4) !== SHARD_MAGIC) {
    throw new Error('not a feature shard (bad magic/header)')
  }
  const k = buf.readUInt32LE(4)
  const n = buf.readUInt32LE(8)
  if (k < 1) throw new Error(`header declares K=${k}`)
  const recordBytes = 4 + 4 * k
  if (buf.length !== 12 + n * recordBytes) {
    throw new Error(
      `expected ${n} records of ${recordBytes} bytes, found ${buf.length - 12} payload bytes`,
    )
  }
  const records: ShardRecord[] = []
  let off = 12
  for (let i = 0; i < n; i++) {
    const label = buf.readUInt32LE(off)
    off += 4
    const values = new Float64Array(k)
    for (let j = 0; j < k; j++) {
      values[j] = buf.readFloatLE(off)
      off += 4
    }
    records.push({ label, values })
  }
  return { k, records }
}
