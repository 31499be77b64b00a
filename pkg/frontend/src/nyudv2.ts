/**
 * Convert an NYUDv2-style raw capture into the engine's sequence layout.
 *
 * Raw folders hold timestamped Netpbm dumps: r-<epoch>-<n>.ppm color and
 * d-<epoch>-<n>.pgm depth. Each color frame is paired with the nearest
 * depth frame by timestamp; frames without a close depth match are
 * skipped with a warning, and frames arriving more than 500 ms after the
 * previous kept frame are flagged (sequences need at least 2 frames per
 * second to be usable for tracking-based mapping).
 */

import * as fs from 'fs'
import * as path from 'path'

import { readPnm, writeColorPng, writeDepthPng } from './images'

export const MAX_FRAME_GAP_S = 0.5
// Kinect v1 defaults at 640x480
export const DEFAULT_INTRINSICS = { fx: 582.62, fy: 582.69, cx: 313.04, cy: 238.44 }

export interface ConvertOptions {
  /** meters per raw depth unit (default: raw units are millimeters) */
  depthScale?: number
  /** max |t_color - t_depth| in seconds to accept a pair */
  syncTolerance?: number
  intrinsics?: { fx: number; fy: number; cx: number; cy: number }
}

export interface ConvertResult {
  frames: { index: number; timestamp: number; lowRate: boolean }[]
  skipped: string[]
  width: number
  height: number
}

interface RawEntry {
  timestamp: number
  file: string
}

function scan(rawDir: string, prefix: string, ext: string): RawEntry[] {
  const out: RawEntry[] = []
  for (const name of fs.readdirSync(rawDir)) {
    if (!name.startsWith(prefix) || !name.endsWith(ext)) continue
    const stamp = parseFloat(name.slice(prefix.length).split('-')[0])
    if (Number.isFinite(stamp)) out.push({ timestamp: stamp, file: path.join(rawDir, name) })
  }
  out.sort((a, b) => a.timestamp - b.timestamp)
  return out
}

export function convertNyudv2(rawDir: string, outDir: string,
                              opts: ConvertOptions = {}): ConvertResult {
  const depthScale = opts.depthScale ?? 0.001
  const tol = opts.syncTolerance ?? 0.05
  const intr = opts.intrinsics ?? DEFAULT_INTRINSICS

  const colors = scan(rawDir, 'r-', '.ppm')
  const depths = scan(rawDir, 'd-', '.pgm')
  if (colors.length === 0 || depths.length === 0) {
    throw new Error(`${rawDir}: expected r-*.ppm and d-*.pgm files`)
  }

  for (const sub of ['color', 'depth']) {
    fs.mkdirSync(path.join(outDir, sub), { recursive: true })
  }

  const result: ConvertResult = { frames: [], skipped: [], width: 0, height: 0 }
  const poseLines: string[] = []
  let index = 0
  let lastKept = -Infinity
  for (const color of colors) {
    // nearest depth by timestamp
    let best: RawEntry | null = null
    let bestDt = Infinity
    for (const d of depths) {
      const dt = Math.abs(d.timestamp - color.timestamp)
      if (dt < bestDt) {
        bestDt = dt
        best = d
      }
    }
    if (!best || bestDt > tol) {
      console.warn(`skip ${path.basename(color.file)}: no depth within ${tol}s`)
      result.skipped.push(color.file)
      continue
    }
    const rgb = readPnm(color.file)
    const depth = readPnm(best.file)
    if (rgb.channels !== 3) throw new Error(`${color.file}: expected P6 color`)
    if (depth.channels !== 1) throw new Error(`${best.file}: expected P5 depth`)
    if (rgb.width !== depth.width || rgb.height !== depth.height) {
      console.warn(`skip ${path.basename(color.file)}: size mismatch with depth`)
      result.skipped.push(color.file)
      continue
    }
    result.width = rgb.width
    result.height = rgb.height

    const rgb8 = new Uint8Array(rgb.data.length)
    for (let i = 0; i < rgb.data.length; i++) rgb8[i] = rgb.data[i] & 0xff
    writeColorPng(path.join(outDir, 'color', `${String(index).padStart(6, '0')}.png`),
                  { width: rgb.width, height: rgb.height, data: rgb8 })

    const mm = new Uint16Array(depth.data.length)
    for (let i = 0; i < depth.data.length; i++) {
      const meters = depth.data[i] * depthScale
      mm[i] = Math.min(65535, Math.max(0, Math.round(meters * 1000)))
    }
    writeDepthPng(path.join(outDir, 'depth', `${String(index).padStart(6, '0')}.png`),
                  mm, depth.width, depth.height)

    const lowRate = index > 0 && color.timestamp - lastKept > MAX_FRAME_GAP_S
    result.frames.push({ index, timestamp: color.timestamp, lowRate })
    poseLines.push('1.0 0.0 0.0 0.0 0.0 1.0 0.0 0.0 0.0 0.0 1.0 0.0')
    lastKept = color.timestamp
    index += 1
  }

  // default intrinsics are for 640x480 captures; scale to the actual size
  let { fx, fy, cx, cy } = intr
  if (!opts.intrinsics && result.width > 0 && (result.width !== 640 || result.height !== 480)) {
    const sx = result.width / 640
    const sy = result.height / 480
    fx *= sx
    cx *= sx
    fy *= sy
    cy *= sy
  }
  fs.writeFileSync(path.join(outDir, 'intrinsics.txt'),
                   `${fx} ${fy} ${cx} ${cy} ${result.width} ${result.height}\n`)
  fs.writeFileSync(path.join(outDir, 'poses.txt'), poseLines.join('\n') + '\n')
  fs.writeFileSync(path.join(outDir, 'conversion.json'), JSON.stringify({
    source: rawDir,
    depth_scale: depthScale,
    sync_tolerance_s: tol,
    poses: 'identity (raw capture carries no trajectory)',
    low_rate_flagged: result.frames.filter((f) => f.lowRate).map((f) => f.index),
    skipped: result.skipped.map((f) => path.basename(f)),
  }, null, 2) + '\n')
  return result
}
