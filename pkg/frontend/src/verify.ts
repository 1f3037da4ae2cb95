/**
 * Shard sanity checks: header fields, per-class counts, and unit-norm
 * verification (extraction normalizes once; loading re-verifies, never
 * re-applies).
 */

import * as fs from 'fs'
import { decodeShard } from './shard'

export interface ShardSummary {
  K: number
  count: number
  perClass: Record<number, number>
  maxNormDeviation: number
}

export function verifyShard(path: string, normTolerance = 1e-3): ShardSummary {
  const { k, records } = decodeShard(fs.readFileSync(path))
  if (records.length === 0) {
    throw new Error(`${path}: empty shard (N=0)`)
  }
  const perClass: Record<number, number> = {}
  let maxDev = 0
  records.forEach((rec, i) => {
    perClass[rec.label] = (perClass[rec.label] ?? 0) + 1
    let norm = 0
    for (let j = 0; j < k; j++) {
      const v = rec.values[j]
      if (!Number.isFinite(v)) {
        throw new Error(`${path}: non-finite value in record ${i}`)
      }
      norm += v * v
    }
    maxDev = Math.max(maxDev, Math.abs(Math.sqrt(norm) - 1))
  })
  if (maxDev > normTolerance) {
    throw new Error(
      `${path}: record norms deviate from 1 by up to ${maxDev.toExponential(3)} ` +
        `(tolerance ${normTolerance})`,
    )
  }
  return { K: k, count: records.length, perClass, maxNormDeviation: maxDev }
}
