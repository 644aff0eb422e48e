import * as fs from 'fs'
import * as path from 'path'
import { PNG } from 'pngjs'
import * as jpeg from 'jpeg-js'

export interface RgbImage {
  width: number
  height: number
  /** RGB triplets in [0, 1], row-major */
  data: Float32Array
}

export const IMAGE_EXTENSIONS = ['.png', '.jpg', '.jpeg']

export function decodeImage(filePath: string): RgbImage {
  const ext = path.extname(filePath).toLowerCase()
  const buf = fs.readFileSync(filePath)
  let width: number
  let height: number
  let rgba: Uint8Array
  if (ext === '.png') {
    const png = PNG.sync.read(buf)
    width = png.width
    height = png.height
    rgba = png.data
  } else if (ext === '.jpg' || ext === '.jpeg') {
    const decoded = jpeg.decode(buf, { useTArray: true })
    width = decoded.width
    height = decoded.height
    rgba = decoded.data
  } else {
    throw new Error(`unsupported image format: ${filePath}`)
  }
  const data = new Float32Array(width * height * 3)
  for (let i = 0; i < width * height; i++) {
    data[i * 3] = rgba[i * 4] / 255
    data[i * 3 + 1] = rgba[i * 4 + 1] / 255
    data[i * 3 + 2] = rgba[i * 4 + 2] / 255
  }
  return { width, height, data }
}

/** Bilinear resize to size x size (the fixed "resize-center" preprocessing;
 * images are assumed roughly square, non-square inputs are center-cropped). */
export function resizeRgb(img: RgbImage, size: number): RgbImage {
  const side = Math.min(img.width, img.height)
  const offX = Math.floor((img.width - side) / 2)
  const offY = Math.floor((img.height - side) / 2)
  const out = new Float32Array(size * size * 3)
  for (let y = 0; y < size; y++) {
    const srcY = offY + ((y + 0.5) / size) * side - 0.5
    const y0 = Math.max(0, Math.floor(srcY))
    const y1 = Math.min(img.height - 1, y0 + 1)
    const fy = srcY - y0
    for (let x = 0; x < size; x++) {
      const srcX = offX + ((x + 0.5) / size) * side - 0.5
      const x0 = Math.max(0, Math.floor(srcX))
      const x1 = Math.min(img.width - 1, x0 + 1)
      const fx = srcX - x0
      for (let c = 0; c < 3; c++) {
        const p00 = img.data[(y0 * img.width + x0) * 3 + c]
        const p01 = img.data[(y0 * img.width + x1) * 3 + c]
        const p10 = img.data[(y1 * img.width + x0) * 3 + c]
        const p11 = img.data[(y1 * img.width + x1) * 3 + c]
        out[(y * size + x) * 3 + c] =
          p00 * (1 - fy) * (1 - fx) +
          p01 * (1 - fy) * fx +
          p10 * fy * (1 - fx) +
          p11 * fy * fx
      }
    }
  }
  return { width: size, height: size, data: out }
}
