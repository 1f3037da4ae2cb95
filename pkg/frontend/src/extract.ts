/**
 * Walk a class-per-subfolder image root, push every image through a fixed
 * backbone, L2-normalize, and emit an FVS1 shard plus a JSON manifest
 * (class-name -> label id, skipped files, backbone id, K).
 *
 * Deterministic by construction: record order is the sorted file paths,
 * class ids are assigned in sorted class-name order, and the backbone is
 * fixed, so running twice produces byte-identical output.
 */

import * as fs from 'fs'
import * as path from 'path'
import { DEFAULT_BACKBONE, getBackbone } from './backbone'
import { loadPng, preprocess } from './image'
import { ShardRecord, encodeShard } from './shard'

export interface ExtractionSpec {
  imageRoot: string
  backbone?: string
  /** Declared output width; must equal the backbone's feature width. */
  K?: number
  /** Square input size of the resize/center-crop policy (backbone default). */
  inputSize?: number
  /** Accepted for interface completeness; extraction is synchronous CPU. */
  batchSize?: number
  device?: 'cpu'
  outPath: string
  manifestPath: string
}

export interface ExtractionResult {
  recordCount: number
  K: number
  classes: Record<string, number>
  skipped: { file: string; reason: string }[]
}

export function extract(spec: ExtractionSpec, warn: (msg: string) => void = console.error): ExtractionResult {
  const backbone = getBackbone(spec.backbone ?? DEFAULT_BACKBONE)
  if (spec.K !== undefined && spec.K !== backbone.K) {
    throw new Error(`declared K=${spec.K} does not match backbone width ${backbone.K}`)
  }
  if (spec.device !== undefined && spec.device !== 'cpu') {
    throw new Error(`unsupported device ${spec.device}`)
  }
  const size = spec.inputSize ?? backbone.inputSize

  const classNames = fs
    .readdirSync(spec.imageRoot, { withFileTypes: true })
    .filter((e) => e.isDirectory())
    .map((e) => e.name)
    .sort()
  if (classNames.length === 0) {
    throw new Error(`${spec.imageRoot}: no class subfolders`)
  }
  const classes: Record<string, number> = {}
  classNames.forEach((name, i) => {
    classes[name] = i
  })

  const records: ShardRecord[] = []
  const skipped: { file: string; reason: string }[] = []
  for (const className of classNames) {
    const dir = path.join(spec.imageRoot, className)
    const files = fs
      .readdirSync(dir)
      .filter((f) => fs.statSync(path.join(dir, f)).isFile())
      .sort()
    for (const file of files) {
      const rel = path.join(className, file)
      const full = path.join(dir, file)
      let features: Float64Array
      try {
        if (!file.toLowerCase().endsWith('.png')) {
          throw new Error('unsupported format (PNG only)')
        }
        const img = preprocess(loadPng(full), size)
        features = backbone.forward(img)
        let norm = 0
        for (let i = 0; i < features.length; i++) {
          norm += features[i] * features[i]
        }
        norm = Math.sqrt(norm)
        if (!(norm > 0) || !Number.isFinite(norm)) {
          throw new Error('degenerate feature vector (zero or non-finite norm)')
        }
        for (let i = 0; i < features.length; i++) {
          features[i] /= norm
        }
      } catch (err) {
        const reason = err instanceof Error ? err.message : String(err)
        warn(`warning: skipping ${rel}: ${reason}`)
        skipped.push({ file: rel, reason })
        continue
      }
      records.push({ label: classes[className], values: features })
    }
  }
  if (records.length === 0) {
    throw new Error('zero records extracted')
  }

  fs.writeFileSync(spec.outPath, encodeShard(backbone.K, records))
  const manifest = {
    backbone: backbone.name,
    K: backbone.K,
    inputSize: size,
    count: records.length,
    classes,
    skipped,
  }
  fs.writeFileSync(spec.manifestPath, JSON.stringify(manifest, null, 2) + '\n')
  return { recordCount: records.length, K: backbone.K, classes, skipped }
}
