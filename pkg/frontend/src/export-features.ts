/**
 * Export one .featpack per color frame of a sequence directory, plus a
 * manifest tying the fixtures to the exact checkpoint.
 */

import * as fs from 'fs'
import * as path from 'path'
import * as tf from '@tensorflow/tfjs'

import { FEATURE_DIM, writeFeatpack } from './featpack'
import { readColorPng } from './images'
import {
  MODEL_ID, TRAINED_CLASSES, buildModel, checkpointHash, inferFrame,
  loadCheckpoint, saveCheckpoint,
} from './model'

export interface ExportManifest {
  model_id: string
  checkpoint_hash: string
  classes: string[]
  num_prob_classes: number
  feature_dim: number
  resize_mode: string
  frames: { index: number; file: string }[]
}

export interface ExportOptions {
  /** existing checkpoint directory; mutually exclusive with seed */
  modelDir?: string
  /** build a fresh seeded checkpoint under outDir/checkpoint */
  seed?: number
}

export async function exportFeatures(framesDir: string, outDir: string,
                                     opts: ExportOptions = {}): Promise<ExportManifest> {
  const colorDir = fs.existsSync(path.join(framesDir, 'color'))
    ? path.join(framesDir, 'color') : framesDir
  const names = fs.readdirSync(colorDir).filter((n: string) => n.endsWith('.png')).sort()
  if (names.length === 0) {
    throw new Error(`no .png frames under ${colorDir}`)
  }
  fs.mkdirSync(path.join(outDir, 'features'), { recursive: true })

  let model: tf.LayersModel
  let ckptDir: string
  if (opts.modelDir) {
    ckptDir = opts.modelDir
    model = await loadCheckpoint(ckptDir)
  } else {
    const seed = opts.seed ?? 1
    model = buildModel(seed)
    ckptDir = path.join(outDir, 'checkpoint')
    await saveCheckpoint(model, ckptDir)
  }

  const manifest: ExportManifest = {
    model_id: MODEL_ID,
    checkpoint_hash: checkpointHash(ckptDir),
    classes: TRAINED_CLASSES,
    num_prob_classes: TRAINED_CLASSES.length,
    feature_dim: FEATURE_DIM,
    resize_mode: 'bilinear-to-input',
    frames: [],
  }

  for (const name of names) {
    const img = readColorPng(path.join(colorDir, name))
    const out = inferFrame(model, img.data, img.width, img.height)
    const index = parseInt(name.replace('.png', ''), 10)
    const file = path.join('features', `${String(index).padStart(6, '0')}.featpack`)
    writeFeatpack(path.join(outDir, file), {
      height: img.height,
      width: img.width,
      featureDim: FEATURE_DIM,
      numClasses: out.numClasses,
      features: out.features,
      probs: out.probs,
    })
    manifest.frames.push({ index, file })
  }
  fs.writeFileSync(path.join(outDir, 'manifest.json'),
                   JSON.stringify(manifest, null, 2) + '\n')
  return manifest
}
