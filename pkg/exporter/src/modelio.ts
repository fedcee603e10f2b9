/**
 * Disk IO for tfjs layers models without the native tfjs-node handlers:
 * a directory holds model.json (topology + weights manifest) and one
 * weights.bin with all weight blobs concatenated.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';
import * as tf from '@tensorflow/tfjs';

export async function saveModelDir(model: tf.LayersModel, dir: string): Promise<void> {
  fs.mkdirSync(dir, { recursive: true });
  await model.save(tf.io.withSaveHandler(async artifacts => {
    const weightData = artifacts.weightData as ArrayBuffer;
    fs.writeFileSync(path.join(dir, 'weights.bin'), Buffer.from(weightData));
    const manifest = [{ paths: ['weights.bin'], weights: artifacts.weightSpecs }];
    fs.writeFileSync(path.join(dir, 'model.json'), JSON.stringify({
      modelTopology: artifacts.modelTopology,
      format: 'layers-model',
      generatedBy: 'pnf-exporter',
      weightsManifest: manifest,
    }));
    return { modelArtifactsInfo: { dateSaved: new Date(), modelTopologyType: 'JSON' } };
  }));
}

export async function loadModelDir(modelJsonPath: string): Promise<tf.LayersModel> {
  const dir = path.dirname(modelJsonPath);
  const spec = JSON.parse(fs.readFileSync(modelJsonPath, 'utf-8'));
  const weightSpecs: tf.io.WeightsManifestEntry[] = [];
  const buffers: Buffer[] = [];
  for (const group of spec.weightsManifest) {
    weightSpecs.push(...group.weights);
    for (const rel of group.paths) {
      buffers.push(fs.readFileSync(path.join(dir, rel)));
    }
  }
  const weightData = Buffer.concat(buffers);
  return tf.loadLayersModel(tf.io.fromMemory({
    modelTopology: spec.modelTopology,
    weightSpecs,
    weightData: weightData.buffer.slice(weightData.byteOffset,
                                        weightData.byteOffset + weightData.byteLength),
  }));
}
