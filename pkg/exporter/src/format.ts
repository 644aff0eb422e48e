import * as fs from 'fs'

// Binary feature matrix: "FEAT" magic, version byte 1, u32le N, u32le D,
// then N*D float32le values row-major. Must stay in lockstep with the
// consumer's loader.
export const FEATURE_MAGIC = 'FEAT'
export const FEATURE_VERSION = 1

export interface ManifestItem {
  id: string
  true_label: number | null
  is_prototype: boolean
}

export interface Manifest {
  classes: string[]
  groups: number[][]
  has_ood_class: boolean
  items: ManifestItem[]
}

export function writeFeaturesBin(path: string, rows: Float32Array[]): void {
  const n = rows.length
  const d = n > 0 ? rows[0].length : 0
  for (const row of rows) {
    if (row.length !== d) {
      throw new Error('feature rows must share one dimensionality')
    }
    for (const v of row) {
      if (!Number.isFinite(v)) throw new Error('non-finite feature value')
    }
  }
  const header = Buffer.alloc(4 + 1 + 8)
  header.write(FEATURE_MAGIC, 0, 'ascii')
  header.writeUInt8(FEATURE_VERSION, 4)
  header.writeUInt32LE(n, 5)
  header.writeUInt32LE(d, 9)
  const payload = Buffer.alloc(n * d * 4)
  rows.forEach((row, i) => {
    for (let j = 0; j < d; j++) {
      payload.writeFloatLE(row[j], (i * d + j) * 4)
    }
  })
  fs.writeFileSync(path, Buffer.concat([header, payload]))
}

export function readFeaturesBin(path: string): { n: number; d: number; data: Float32Array } {
  const buf = fs.readFileSync(path)
  if (buf.length < 13 || buf.toString('ascii', 0, 4) !== FEATURE_MAGIC) {
    throw new Error(`${path}: not a feature file`)
  }
  if (buf.readUInt8(4) !== FEATURE_VERSION) {
    throw new Error(`${path}: unsupported version`)
  }
  const n = buf.readUInt32LE(5)
  const d = buf.readUInt32LE(9)
  if (buf.length < 13 + n * d * 4) {
    throw new Error(`${path}: truncated payload`)
  }
  const data = new Float32Array(n * d)
  for (let i = 0; i < n * d; i++) {
    data[i] = buf.readFloatLE(13 + i * 4)
  }
  return { n, d, data }
}

export function writeManifest(path: string, manifest: Manifest): void {
  fs.writeFileSync(path, JSON.stringify(manifest, null, 2) + '\n')
}
