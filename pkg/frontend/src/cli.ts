#!/usr/bin/env node
/** CLI: export-features and convert-nyudv2. */

import { exportFeatures } from './export-features'
import { convertNyudv2 } from './nyudv2'

function parseFlags(argv: string[]): { positional: string[]; flags: Map<string, string> } {
  const positional: string[] = []
  const flags = new Map<string, string>()
  for (let i = 0; i < argv.length; i++) {
    const a = argv[i]
    if (a.startsWith('--')) {
      const eq = a.indexOf('=')
      if (eq >= 0) {
        flags.set(a.slice(2, eq), a.slice(eq + 1))
      } else {
        flags.set(a.slice(2), argv[++i])
      }
    } else {
      positional.push(a)
    }
  }
  return { positional, flags }
}

function usage(): never {
  console.error(
    'usage:\n' +
    '  segmap-features export-features <frames_dir> <out_dir> [--seed N | --model DIR]\n' +
    '  segmap-features convert-nyudv2 <raw_dir> <out_dir> [--depth-scale M] [--sync-tol S]\n')
  process.exit(2)
}

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv
  const { positional, flags } = parseFlags(rest)
  if (command === 'export-features') {
    if (positional.length !== 2) usage()
    const manifest = await exportFeatures(positional[0], positional[1], {
      modelDir: flags.get('model'),
      seed: flags.has('seed') ? parseInt(flags.get('seed')!, 10) : undefined,
    })
    console.log(`wrote ${manifest.frames.length} packets ` +
                `(checkpoint ${manifest.checkpoint_hash.slice(0, 12)})`)
    return 0
  }
  if (command === 'convert-nyudv2') {
    if (positional.length !== 2) usage()
    const res = convertNyudv2(positional[0], positional[1], {
      depthScale: flags.has('depth-scale') ? parseFloat(flags.get('depth-scale')!) : undefined,
      syncTolerance: flags.has('sync-tol') ? parseFloat(flags.get('sync-tol')!) : undefined,
    })
    const flagged = res.frames.filter((f) => f.lowRate).length
    console.log(`converted ${res.frames.length} frames ` +
                `(${res.skipped.length} skipped, ${flagged} low-rate flagged)`)
    return 0
  }
  usage()
}

if (require.main === module) {
  main(process.argv.slice(2)).then(
    (code) => process.exit(code),
    (err) => {
      console.error(err.message ?? err)
      process.exit(1)
    },
  )
}
