#!/usr/bin/env node
import { EncoderUnavailable, makeEncoder } from './encoder'
import { EmptyClassFolder, exportDataset } from './export'

interface Args {
  images?: string
  encoder: string
  out?: string
  prototypes: number
  weights?: string
}

function parseArgs(argv: string[]): Args {
  const args: Args = { encoder: 'pixel', prototypes: 10 }
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i]
    const next = () => {
      if (i + 1 >= argv.length) throw new Error(`${flag} needs a value`)
      return argv[++i]
    }
    switch (flag) {
      case 'export':
        break
      case '--images':
        args.images = next()
        break
      case '--encoder':
        args.encoder = next()
        break
      case '--out':
        args.out = next()
        break
      case '--prototypes':
        args.prototypes = parseInt(next(), 10)
        break
      case '--weights':
        args.weights = next()
        break
      default:
        throw new Error(`unknown flag ${flag}`)
    }
  }
  return args
}

const USAGE =
  'usage: crowdloop-export export --images <dir> --encoder <name> ' +
  '--out <dir> [--prototypes 10] [--weights file.json]'

export function main(argv: string[]): number {
  let args: Args
  try {
    args = parseArgs(argv)
    if (!args.images || !args.out) throw new Error('--images and --out are required')
  } catch (err) {
    console.error(`crowdloop-export: ${(err as Error).message}`)
    console.error(USAGE)
    return 2
  }
  try {
    const encoder = makeEncoder(args.encoder, args.weights)
    const result = exportDataset({
      imageRoot: args.images,
      encoder,
      outDir: args.out,
      prototypesPerClass: args.prototypes,
    })
    console.log(
      `exported ${result.nItems} items (${result.classes.length} classes, ` +
        `dim ${result.dim}) to ${args.out}`
    )
    return 0
  } catch (err) {
    if (err instanceof EncoderUnavailable || err instanceof EmptyClassFolder) {
      console.error(`crowdloop-export: ${err.message}`)
      return 2
    }
    throw err
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)))
}
