#!/usr/bin/env node
/**
 * Extractor CLI.
 *
 *   cli.js extract --images DIR --out SHARD --manifest JSON [--backbone NAME] [--size N]
 *   cli.js verify --shard SHARD
 *
 * Exit codes: 0 success, 1 unreadable/corrupt files, 2 invalid arguments.
 */

import { parseArgs } from 'util'
import { DEFAULT_BACKBONE } from './backbone'
import { extract } from './extract'
import { verifyShard } from './verify'

function runExtract(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      images: { type: 'string' },
      out: { type: 'string' },
      manifest: { type: 'string' },
      backbone: { type: 'string', default: DEFAULT_BACKBONE },
      size: { type: 'string' },
    },
  })
  if (!values.images || !values.out || !values.manifest) {
    console.error('error: --images, --out, and --manifest are required')
    return 2
  }
  const result = extract({
    imageRoot: values.images,
    backbone: values.backbone,
    inputSize: values.size ? parseInt(values.size, 10) : undefined,
    outPath: values.out,
    manifestPath: values.manifest,
  })
  const nClasses = Object.keys(result.classes).length
  console.log(
    `extracted ${result.recordCount} records (K=${result.K}, ${nClasses} classes, ` +
      `${result.skipped.length} skipped) -> ${values.out}`,
  )
  return 0
}

function runVerify(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: { shard: { type: 'string' } },
  })
  if (!values.shard) {
    console.error('error: --shard is required')
    return 2
  }
  const summary = verifyShard(values.shard)
  console.log(`K=${summary.K} N=${summary.count}`)
  for (const label of Object.keys(summary.perClass).sort((a, b) => +a - +b)) {
    console.log(`class ${label}: ${summary.perClass[+label]} records`)
  }
  console.log(`max norm deviation: ${summary.maxNormDeviation.toExponential(3)}`)
  return 0
}

function main(): number {
  const [command, ...rest] = process.argv.slice(2)
  try {
    if (command === 'extract') return runExtract(rest)
    if (command === 'verify') return runVerify(rest)
    console.error('usage: cli.js <extract|verify> ...')
    return 2
  } catch (err) {
    const msg = err instanceof Error ? err.message : String(err)
    console.error(`error: ${msg}`)
    const validation =
      msg.includes('does not match') || msg.includes('unknown backbone') || msg.includes('unsupported device')
    return validation ? 2 : 1
  }
}

process.exit(main())
