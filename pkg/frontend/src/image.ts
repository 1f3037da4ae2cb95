/**
 * Image loading and the fixed resize/crop policy.
 *
 * PNG only (decoded via pngjs); anything else is reported as unreadable so
 * the extractor can skip it and list it in the manifest.  The policy is a
 * single deterministic path: bilinear-resize the short side to the target,
 * center-crop, no augmentation.
 */

import * as fs from 'fs'
import { PNG } from 'pngjs'

/** HWC float image, values in [0, 1]. */
export interface RgbImage {
  width: number
  height: number
  data: Float64Array // length = width * height * 3
}

export function loadPng(path: string): RgbImage {
  const png = PNG.sync.read(fs.readFileSync(path))
  const { width, height, data } = png
  const out = new Float64Array(width * height * 3)
  for (let i = 0, p = 0; i < width * height; i++, p += 4) {
    out[i * 3] = data[p] / 255
    out[i * 3 + 1] = data[p + 1] / 255
    out[i * 3 + 2] = data[p + 2] / 255
  }
  return { width, height, data: out }
}

function sample(img: RgbImage, x: number, y: number, c: number): number {
  return img.data[(y * img.width + x) * 3 + c]
}

/** Bilinear resize to exactly (w, h). */
export function resize(img: RgbImage, w: number, h: number): RgbImage {
  const out = new Float64Array(w * h * 3)
  const sx = img.width / w
  const sy = img.height / h
  for (let y = 0; y < h; y++) {
    const fy = Math.min((y + 0.5) * sy - 0.5, img.height - 1)
    const y0 = Math.max(Math.floor(fy), 0)
    const y1 = Math.min(y0 + 1, img.height - 1)
    const wy = Math.max(fy - y0, 0)
    for (let x = 0; x < w; x++) {
      const fx = Math.min((x + 0.5) * sx - 0.5, img.width - 1)
      const x0 = Math.max(Math.floor(fx), 0)
      const x1 = Math.min(x0 + 1, img.width - 1)
      const wx = Math.max(fx - x0, 0)
      for (let c = 0; c < 3; c++) {
        const top = sample(img, x0, y0, c) * (1 - wx) + sample(img, x1, y0, c) * wx
        const bot = sample(img, x0, y1, c) * (1 - wx) + sample(img, x1, y1, c) * wx
        out[(y * w + x) * 3 + c] = top * (1 - wy) + bot * wy
      }
    }
  }
  return { width: w, height: h, data: out }
}

export function centerCrop(img: RgbImage, size: number): RgbImage {
  const x0 = Math.floor((img.width - size) / 2)
  const y0 = Math.floor((img.height - size) / 2)
  const out = new Float64Array(size * size * 3)
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      for (let c = 0; c < 3; c++) {
        out[(y * size + x) * 3 + c] = sample(img, x0 + x, y0 + y, c)
      }
    }
  }
  return { width: size, height: size, data: out }
}

/** Short side to `size`, then center-crop to size x size. */
export function preprocess(img: RgbImage, size: number): RgbImage {
  const scale = size / Math.min(img.width, img.height)
  const w = Math.max(Math.round(img.width * scale), size)
  const h = Math.max(Math.round(img.height * scale), size)
  return centerCrop(resize(img, w, h), size)
}
