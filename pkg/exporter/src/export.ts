import * as fs from 'fs'
import * as path from 'path'
import { Encoder } from './encoder'
import { decodeImage, IMAGE_EXTENSIONS } from './image'
import { Manifest, ManifestItem, writeFeaturesBin, writeManifest } from './format'

export class EmptyClassFolder extends Error {}

export interface ExportSpec {
  imageRoot: string
  encoder: Encoder
  outDir: string
  prototypesPerClass: number
}

export interface ExportResult {
  featuresPath: string
  manifestPath: string
  nItems: number
  dim: number
  classes: string[]
}

function listImages(dir: string): string[] {
  return fs
    .readdirSync(dir)
    .filter((f) => IMAGE_EXTENSIONS.includes(path.extname(f).toLowerCase()))
    .sort()
}

/** Walk a class-per-subfolder image tree and emit features.bin +
 * manifest.json. True labels come from the (sorted) folder order; the first
 * prototypesPerClass images of each class (sorted filename) are flagged as
 * prototypes. */
export function exportDataset(spec: ExportSpec): ExportResult {
  if (spec.prototypesPerClass < 2) {
    throw new Error('prototypesPerClass must be >= 2')
  }
  const classDirs = fs
    .readdirSync(spec.imageRoot, { withFileTypes: true })
    .filter((e) => e.isDirectory())
    .map((e) => e.name)
    .sort()
  if (classDirs.length === 0) {
    throw new EmptyClassFolder(`${spec.imageRoot}: no class subfolders`)
  }

  const rows: Float32Array[] = []
  const items: ManifestItem[] = []
  classDirs.forEach((className, classIndex) => {
    const dir = path.join(spec.imageRoot, className)
    const files = listImages(dir)
    if (files.length === 0) {
      throw new EmptyClassFolder(`${dir}: class folder holds no images`)
    }
    files.forEach((file, i) => {
      const img = decodeImage(path.join(dir, file))
      rows.push(spec.encoder.encode(img))
      items.push({
        id: `${className}/${file}`,
        true_label: classIndex,
        is_prototype: i < spec.prototypesPerClass,
      })
    })
  })

  const manifest: Manifest = {
    classes: classDirs,
    groups: classDirs.map((_, i) => [i]),
    has_ood_class: false,
    items,
  }

  fs.mkdirSync(spec.outDir, { recursive: true })
  const featuresPath = path.join(spec.outDir, 'features.bin')
  const manifestPath = path.join(spec.outDir, 'manifest.json')
  writeFeaturesBin(featuresPath, rows)
  writeManifest(manifestPath, manifest)
  const meta = {
    encoder: spec.encoder.name,
    dim: spec.encoder.dim,
    preprocessing: 'center-crop + bilinear resize, RGB in [0,1]',
    prototypes_per_class: spec.prototypesPerClass,
  }
  fs.writeFileSync(
    path.join(spec.outDir, 'export_meta.json'),
    JSON.stringify(meta, null, 2) + '\n'
  )
  return {
    featuresPath,
    manifestPath,
    nItems: items.length,
    dim: spec.encoder.dim,
    classes: classDirs,
  }
}
