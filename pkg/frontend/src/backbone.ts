/**
 * Fixed convolutional backbones with the classification head removed.
 *
 * The shipped `tinyconv-64` is a small conv stack ending in global average
 * pooling whose weights are generated once from a named seed, so they are
 * available locally and every extraction is bit-reproducible.  It is a
 * stand-in with the same shape contract as a real pretrained network
 * (penultimate width == declared K); heavier backbones can be registered
 * without touching the extraction pipeline.
 */

import { RgbImage } from './image'

export interface Backbone {
  name: string
  /** Expected square input size after the resize/crop policy. */
  inputSize: number
  /** Output feature width (penultimate layer, after global average pooling). */
  K: number
  forward(img: RgbImage): Float64Array
}

function fnv1a(text: string): number {
  let h = 0x811c9dc5
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i)
    h = Math.imul(h, 0x01000193) >>> 0
  }
  return h >>> 0
}

/** mulberry32: small deterministic PRNG, identical on every platform. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) >>> 0
    let t = a
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

interface ConvLayer {
  cin: number
  cout: number
  weights: Float64Array // (cout, cin, 3, 3)
  bias: Float64Array
}

function makeConv(cin: number, cout: number, rand: () => number): ConvLayer {
  const fanIn = cin * 9
  const bound = Math.sqrt(6 / fanIn)
  const weights = new Float64Array(cout * cin * 9)
  for (let i = 0; i < weights.length; i++) {
    weights[i] = (rand() * 2 - 1) * bound
  }
  const bias = new Float64Array(cout)
  for (let i = 0; i < cout; i++) {
    bias[i] = 0.01
  }
  return { cin, cout, weights, bias }
}

/** Valid 3x3 convolution + ReLU on an HWC buffer. */
function convRelu(
  input: Float64Array,
  h: number,
  w: number,
  layer: ConvLayer,
): { data: Float64Array; h: number; w: number } {
  const oh = h - 2
  const ow = w - 2
  const { cin, cout, weights, bias } = layer
  const out = new Float64Array(oh * ow * cout)
  for (let y = 0; y < oh; y++) {
    for (let x = 0; x < ow; x++) {
      for (let co = 0; co < cout; co++) {
        let acc = bias[co]
        for (let ky = 0; ky < 3; ky++) {
          for (let kx = 0; kx < 3; kx++) {
            const base = ((y + ky) * w + (x + kx)) * cin
            const wbase = ((co * cin) * 9) + ky * 3 + kx
            for (let ci = 0; ci < cin; ci++) {
              acc += input[base + ci] * weights[wbase + ci * 9]
            }
          }
        }
        out[(y * ow + x) * cout + co] = acc > 0 ? acc : 0
      }
    }
  }
  return { data: out, h: oh, w: ow }
}

function avgPool2(
  input: Float64Array,
  h: number,
  w: number,
  c: number,
): { data: Float64Array; h: number; w: number } {
  const oh = Math.floor(h / 2)
  const ow = Math.floor(w / 2)
  const out = new Float64Array(oh * ow * c)
  for (let y = 0; y < oh; y++) {
    for (let x = 0; x < ow; x++) {
      for (let ci = 0; ci < c; ci++) {
        const a = input[((2 * y) * w + 2 * x) * c + ci]
        const b = input[((2 * y) * w + 2 * x + 1) * c + ci]
        const d = input[((2 * y + 1) * w + 2 * x) * c + ci]
        const e = input[((2 * y + 1) * w + 2 * x + 1) * c + ci]
        out[(y * ow + x) * c + ci] = (a + b + d + e) / 4
      }
    }
  }
  return { data: out, h: oh, w: ow }
}

function makeTinyConv(name: string, k: number): Backbone {
  const rand = mulberry32(fnv1a(`bayesmem-backbone:${name}`))
  const conv1 = makeConv(3, 16, rand)
  const conv2 = makeConv(16, 32, rand)
  const conv3 = makeConv(32, k, rand)
  const inputSize = 32
  return {
    name,
    inputSize,
    K: k,
    forward(img: RgbImage): Float64Array {
      if (img.width !== inputSize || img.height !== inputSize) {
        throw new Error(`backbone expects ${inputSize}x${inputSize} input`)
      }
      // pixels [0,1] -> [-1,1]
      const x0 = new Float64Array(img.data.length)
      for (let i = 0; i < x0.length; i++) {
        x0[i] = img.data[i] * 2 - 1
      }
      let t = convRelu(x0, inputSize, inputSize, conv1) // 30x30x16
      let p = avgPool2(t.data, t.h, t.w, conv1.cout) // 15x15x16
      t = convRelu(p.data, p.h, p.w, conv2) // 13x13x32
      p = avgPool2(t.data, t.h, t.w, conv2.cout) // 6x6x32
      t = convRelu(p.data, p.h, p.w, conv3) // 4x4xK
      // global average pooling; the classification head that would follow
      // is exactly what the extractor omits
      const feats = new Float64Array(k)
      const cells = t.h * t.w
      for (let i = 0; i < cells; i++) {
        for (let ci = 0; ci < k; ci++) {
          feats[ci] += t.data[i * k + ci]
        }
      }
      for (let ci = 0; ci < k; ci++) {
        feats[ci] /= cells
      }
      return feats
    },
  }
}

const REGISTRY: Record<string, () => Backbone> = {
  'tinyconv-64': () => makeTinyConv('tinyconv-64', 64),
  'tinyconv-128': () => makeTinyConv('tinyconv-128', 128),
  'tinyconv-2048': () => makeTinyConv('tinyconv-2048', 2048),
}

// Default matches the production feature width the classifier is sized
// for; the narrow variants keep toy extractions tiny.
export const DEFAULT_BACKBONE = 'tinyconv-2048'

export function getBackbone(name: string): Backbone {
  const make = REGISTRY[name]
  if (!make) {
    throw new Error(`unknown backbone ${name}; available: ${Object.keys(REGISTRY).join(', ')}`)
  }
  return make()
}
