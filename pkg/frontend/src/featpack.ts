/**
 * FPK1 feature-packet format, byte-compatible with the engine's loader:
 * magic "FPK1", then H, W, S, N as little-endian uint32, then the
 * feature map (H*W*S float32 LE, row-major) and the probability map
 * (H*W*N float32 LE, rows summing to 1).
 */

import * as fs from 'fs'

export const MAGIC = 'FPK1'
export const FEATURE_DIM = 64

export interface Featpack {
  height: number
  width: number
  featureDim: number
  numClasses: number
  /** H*W*S row-major */
  features: Float32Array
  /** H*W*N row-major */
  probs: Float32Array
}

export function encodeFeatpack(pack: Featpack): Buffer {
  const { height: h, width: w, featureDim: s, numClasses: n } = pack
  if (pack.features.length !== h * w * s) {
    throw new Error(`feature buffer length ${pack.features.length} != ${h}*${w}*${s}`)
  }
  if (pack.probs.length !== h * w * n) {
    throw new Error(`prob buffer length ${pack.probs.length} != ${h}*${w}*${n}`)
  }
  const header = Buffer.alloc(20)
  header.write(MAGIC, 0, 'ascii')
  header.writeUInt32LE(h, 4)
  header.writeUInt32LE(w, 8)
  header.writeUInt32LE(s, 12)
  header.writeUInt32LE(n, 16)
  // Float32Array is little-endian on every platform node supports
  const feat = Buffer.from(pack.features.buffer, pack.features.byteOffset,
                           pack.features.byteLength)
  const prob = Buffer.from(pack.probs.buffer, pack.probs.byteOffset,
                           pack.probs.byteLength)
  return Buffer.concat([header, feat, prob])
}

export function writeFeatpack(path: string, pack: Featpack): void {
  fs.writeFileSync(path, encodeFeatpack(pack))
}

export function readFeatpack(path: string): Featpack {
  const buf = fs.readFileSync(path)
  if (buf.length < 20 || buf.toString('ascii', 0, 4) !== MAGIC) {
    throw new Error(`${path} is not a FPK1 packet`)
  }
  const h = buf.readUInt32LE(4)
  const w = buf.readUInt32LE(8)
  const s = buf.readUInt32LE(12)
  const n = buf.readUInt32LE(16)
  const expected = 20 + 4 * h * w * (s + n)
  if (buf.length !== expected) {
    throw new Error(`${path}: size ${buf.length} != expected ${expected}`)
  }
  const features = new Float32Array(h * w * s)
  const probs = new Float32Array(h * w * n)
  for (let i = 0; i < features.length; i++) features[i] = buf.readFloatLE(20 + 4 * i)
  const probOffset = 20 + 4 * h * w * s
  for (let i = 0; i < probs.length; i++) probs[i] = buf.readFloatLE(probOffset + 4 * i)
  return { height: h, width: w, featureDim: s, numClasses: n, features, probs }
}
