/** PNG and Netpbm (P5/P6) image IO used by the toolchain. */

import * as fs from 'fs'
import { PNG } from 'pngjs'

export interface RgbImage {
  width: number
  height: number
  /** H*W*3 row-major */
  data: Uint8Array
}

export function readColorPng(path: string): RgbImage {
  const png = PNG.sync.read(fs.readFileSync(path))
  const out = new Uint8Array(png.width * png.height * 3)
  for (let i = 0; i < png.width * png.height; i++) {
    out[i * 3] = png.data[i * 4]
    out[i * 3 + 1] = png.data[i * 4 + 1]
    out[i * 3 + 2] = png.data[i * 4 + 2]
  }
  return { width: png.width, height: png.height, data: out }
}

export function writeColorPng(path: string, img: RgbImage): void {
  const png = new PNG({ width: img.width, height: img.height })
  for (let i = 0; i < img.width * img.height; i++) {
    png.data[i * 4] = img.data[i * 3]
    png.data[i * 4 + 1] = img.data[i * 3 + 1]
    png.data[i * 4 + 2] = img.data[i * 3 + 2]
    png.data[i * 4 + 3] = 255
  }
  fs.writeFileSync(path, PNG.sync.write(png))
}

/** 16-bit grayscale PNG (depth in millimeters). */
export function writeDepthPng(path: string, depthMm: Uint16Array,
                              width: number, height: number): void {
  const png = new PNG({
    width, height, colorType: 0, inputColorType: 0,
    bitDepth: 16, inputHasAlpha: false,
  })
  const buf = Buffer.alloc(depthMm.length * 2)
  for (let i = 0; i < depthMm.length; i++) buf.writeUInt16LE(depthMm[i], i * 2)
  png.data = buf as unknown as Buffer
  fs.writeFileSync(path, PNG.sync.write(png, {
    colorType: 0, inputColorType: 0, bitDepth: 16, inputHasAlpha: false,
  }))
}

export interface PnmImage {
  width: number
  height: number
  maxval: number
  /** one value per sample; RGB interleaved for P6 */
  data: Uint16Array
  channels: number
}

/** Binary Netpbm parser for P5 (gray) and P6 (RGB); 16-bit is big-endian. */
export function readPnm(path: string): PnmImage {
  const buf = fs.readFileSync(path)
  let pos = 0
  const token = (): string => {
    // skip whitespace and comments
    for (;;) {
      while (pos < buf.length && /\s/.test(String.fromCharCode(buf[pos]))) pos++
      if (buf[pos] === 0x23) { // '#'
        while (pos < buf.length && buf[pos] !== 0x0a) pos++
      } else {
        break
      }
    }
    const start = pos
    while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) pos++
    return buf.toString('ascii', start, pos)
  }
  const magic = token()
  if (magic !== 'P5' && magic !== 'P6') {
    throw new Error(`${path}: unsupported Netpbm magic ${magic}`)
  }
  const width = parseInt(token(), 10)
  const height = parseInt(token(), 10)
  const maxval = parseInt(token(), 10)
  pos++ // single whitespace after maxval
  const channels = magic === 'P6' ? 3 : 1
  const count = width * height * channels
  const data = new Uint16Array(count)
  if (maxval > 255) {
    for (let i = 0; i < count; i++) data[i] = buf.readUInt16BE(pos + 2 * i)
  } else {
    for (let i = 0; i < count; i++) data[i] = buf[pos + i]
  }
  return { width, height, maxval, data, channels }
}
