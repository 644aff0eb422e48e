import * as fs from 'fs'
import * as path from 'path'
import * as os from 'os'
import { RgbImage, resizeRgb } from './image'

export class EncoderUnavailable extends Error {}

export interface Encoder {
  name: string
  dim: number
  encode(img: RgbImage): Float32Array
}

const PIXEL_GRID = 8

/** Deterministic built-in encoder: an 8x8 RGB thumbnail (192 dims).
 * No weights required; intended for format-contract tests and smoke runs. */
export class PixelEncoder implements Encoder {
  name = 'pixel'
  dim = PIXEL_GRID * PIXEL_GRID * 3

  encode(img: RgbImage): Float32Array {
    return resizeRgb(img, PIXEL_GRID).data.slice()
  }
}

export const PRETRAINED_NAMES = [
  'byol',
  'simclr',
  'moco',
  'rotation',
  'relative-location',
]

interface ProjectionWeights {
  dim: number
  // dim x 192 projection applied to the pixel-grid representation
  matrix: number[][]
}

/** Self-supervised encoders distilled to a linear readout over the pixel
 * grid. Weights are not bundled; point --weights (or
 * CROWDLOOP_ENCODER_DIR/<name>.json) at a downloaded projection file. */
export class ProjectionEncoder implements Encoder {
  name: string
  dim: number
  private matrix: number[][]
  private pixel = new PixelEncoder()

  constructor(name: string, weights: ProjectionWeights) {
    if (!weights.matrix.length || weights.matrix[0].length !== this.inputDim()) {
      throw new EncoderUnavailable(
        `${name}: weights matrix must be dim x ${this.inputDim()}`
      )
    }
    this.name = name
    this.dim = weights.dim
    this.matrix = weights.matrix
  }

  private inputDim(): number {
    return PIXEL_GRID * PIXEL_GRID * 3
  }

  encode(img: RgbImage): Float32Array {
    const base = this.pixel.encode(img)
    const out = new Float32Array(this.dim)
    for (let i = 0; i < this.dim; i++) {
      let acc = 0
      const row = this.matrix[i]
      for (let j = 0; j < base.length; j++) acc += row[j] * base[j]
      out[i] = acc
    }
    return out
  }
}

function weightsSearchPaths(name: string, explicit?: string): string[] {
  const candidates: string[] = []
  if (explicit) candidates.push(explicit)
  const dir = process.env.CROWDLOOP_ENCODER_DIR
  if (dir) candidates.push(path.join(dir, `${name}.json`))
  candidates.push(
    path.join(os.homedir(), '.cache', 'crowdloop-exporter', `${name}.json`)
  )
  return candidates
}

export function makeEncoder(name: string, weightsPath?: string): Encoder {
  if (name === 'pixel') return new PixelEncoder()
  if (!PRETRAINED_NAMES.includes(name)) {
    throw new EncoderUnavailable(
      `unknown encoder '${name}'; choose pixel or one of ${PRETRAINED_NAMES.join(', ')}`
    )
  }
  for (const candidate of weightsSearchPaths(name, weightsPath)) {
    if (fs.existsSync(candidate)) {
      const weights = JSON.parse(fs.readFileSync(candidate, 'utf-8'))
      return new ProjectionEncoder(name, weights)
    }
  }
  throw new EncoderUnavailable(
    `encoder '${name}' needs pretrained weights. Download the projection ` +
      `file for '${name}' and pass it with --weights, or drop it into ` +
      `$CROWDLOOP_ENCODER_DIR/${name}.json`
  )
}
