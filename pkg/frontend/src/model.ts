/**
 * Compact fully-convolutional encoder-decoder used for feature export.
 *
 * The network produces per-pixel class logits plus a 64-channel
 * penultimate activation map. Weights are seeded deterministically so a
 * checkpoint is reproducible from its seed; exports always record the
 * checkpoint hash so fixtures can be traced to exact weights.
 */

import * as crypto from 'crypto'
import * as fs from 'fs'
import * as path from 'path'
import * as tf from '@tensorflow/tfjs'

export const FEATURE_CHANNELS = 64
export const MODEL_ID = 'encdec-seg-v1'

/** The trained subset of the 13-class indoor labeling convention. */
export const TRAINED_CLASSES = [
  'bed', 'books', 'chair', 'floor', 'furniture', 'objects', 'sofa', 'table', 'wall',
]

export function buildModel(seed: number, numClasses: number = TRAINED_CLASSES.length): tf.LayersModel {
  const init = (k: number) => tf.initializers.glorotUniform({ seed: seed + k })
  const input = tf.input({ shape: [null, null, 3] })
  let x = tf.layers.conv2d({
    filters: 16, kernelSize: 3, strides: 2, padding: 'same', activation: 'relu',
    kernelInitializer: init(1), biasInitializer: 'zeros', name: 'enc1',
  }).apply(input) as tf.SymbolicTensor
  x = tf.layers.conv2d({
    filters: 32, kernelSize: 3, strides: 2, padding: 'same', activation: 'relu',
    kernelInitializer: init(2), biasInitializer: 'zeros', name: 'enc2',
  }).apply(x) as tf.SymbolicTensor
  // upsample + conv rather than strided deconv: constant inputs map to
  // constant features (no checkerboard artifacts in the fixtures)
  x = tf.layers.upSampling2d({ size: [2, 2] }).apply(x) as tf.SymbolicTensor
  x = tf.layers.conv2d({
    filters: 32, kernelSize: 3, padding: 'same', activation: 'relu',
    kernelInitializer: init(3), biasInitializer: 'zeros', name: 'dec1',
  }).apply(x) as tf.SymbolicTensor
  x = tf.layers.upSampling2d({ size: [2, 2] }).apply(x) as tf.SymbolicTensor
  const features = tf.layers.conv2d({
    filters: FEATURE_CHANNELS, kernelSize: 3, padding: 'same',
    activation: 'relu', kernelInitializer: init(4), biasInitializer: 'zeros',
    name: 'features',
  }).apply(x) as tf.SymbolicTensor
  const logits = tf.layers.conv2d({
    filters: numClasses, kernelSize: 1, padding: 'same',
    kernelInitializer: init(5), biasInitializer: 'zeros', name: 'logits',
  }).apply(features) as tf.SymbolicTensor
  return tf.model({ inputs: input, outputs: [features, logits] })
}

// plain @tensorflow/tfjs ships no node filesystem handler, so the
// checkpoint IO is spelled out: model.json (topology + weight specs)
// next to weights.bin (raw little-endian weight data)
export async function saveCheckpoint(model: tf.LayersModel, dir: string): Promise<void> {
  fs.mkdirSync(dir, { recursive: true })
  await model.save(tf.io.withSaveHandler(async (artifacts) => {
    const modelJson = {
      modelTopology: artifacts.modelTopology,
      format: artifacts.format,
      generatedBy: artifacts.generatedBy,
      weightsManifest: [{ paths: ['weights.bin'], weights: artifacts.weightSpecs }],
    }
    fs.writeFileSync(path.join(dir, 'model.json'), JSON.stringify(modelJson))
    fs.writeFileSync(path.join(dir, 'weights.bin'),
                     Buffer.from(artifacts.weightData as ArrayBuffer))
    return {
      modelArtifactsInfo: { dateSaved: new Date(), modelTopologyType: 'JSON' as const },
    }
  }))
}

export async function loadCheckpoint(dir: string): Promise<tf.LayersModel> {
  const modelJson = JSON.parse(fs.readFileSync(path.join(dir, 'model.json'), 'utf8'))
  const weights = fs.readFileSync(path.join(dir, 'weights.bin'))
  const weightSpecs = modelJson.weightsManifest.flatMap((g: any) => g.weights)
  const model = await tf.loadLayersModel(tf.io.fromMemory({
    modelTopology: modelJson.modelTopology,
    weightSpecs,
    weightData: weights.buffer.slice(weights.byteOffset,
                                     weights.byteOffset + weights.byteLength),
  }))
  const features = model.outputs[0]
  const channels = features.shape[features.shape.length - 1]
  if (channels !== FEATURE_CHANNELS) {
    throw new Error(
      `checkpoint penultimate layer has ${channels} channels, need ${FEATURE_CHANNELS} ` +
      '(no projection is configured)')
  }
  return model
}

export function checkpointHash(dir: string): string {
  const weights = fs.readFileSync(path.join(dir, 'weights.bin'))
  return crypto.createHash('sha256').update(weights).digest('hex')
}

export interface FrameOutput {
  /** H*W*64, resized to the input resolution */
  features: Float32Array
  /** H*W*N softmax, resized to the input resolution */
  probs: Float32Array
  numClasses: number
}

/** Run the network on one RGB frame and resize outputs to input size. */
export function inferFrame(model: tf.LayersModel, rgb: Uint8Array,
                           width: number, height: number): FrameOutput {
  return tf.tidy(() => {
    const input = tf.tensor4d(Array.from(rgb), [1, height, width, 3], 'float32')
      .div(255.0)
    const [featRaw, logitsRaw] = model.predict(input) as tf.Tensor4D[]
    const feat = tf.image.resizeBilinear(featRaw, [height, width])
    const logits = tf.image.resizeBilinear(logitsRaw, [height, width])
    const probs = tf.softmax(logits, -1)
    const numClasses = probs.shape[3] as number
    return {
      features: feat.dataSync() as Float32Array,
      probs: probs.dataSync() as Float32Array,
      numClasses,
    }
  })
}
