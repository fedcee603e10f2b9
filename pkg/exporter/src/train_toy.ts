/**
 * Trains the 2-layer dense toy classifier (three gaussian blobs in four
 * dimensions) and exports it: artifacts/toy_dense.pnf + probe sidecar, plus
 * the source framework model for the CLI round-trip.
 */

import * as path from 'node:path';
import { fileURLToPath } from 'node:url';
import * as tf from '@tensorflow/tfjs';

import { exportModel } from './export.js';
import { saveModelDir } from './modelio.js';
import { probeInputs } from './export.js';

const HERE = path.dirname(fileURLToPath(import.meta.url));
const ARTIFACTS = path.join(HERE, '..', 'artifacts');

const CENTERS = [
  [2.0, 0.0, -1.0, 0.5],
  [-2.0, 1.0, 1.0, -0.5],
  [0.0, -2.0, 0.0, 1.5],
];

function blobs(perClass: number): { xs: tf.Tensor2D; ys: tf.Tensor2D } {
  // deterministic pseudo-noise so the trained weights are reproducible
  const noise = probeInputs(CENTERS.length * perClass, 4, 77);
  const rows: number[][] = [];
  const labels: number[] = [];
  CENTERS.forEach((center, cls) => {
    for (let i = 0; i < perClass; i++) {
      const jitter = noise[cls * perClass + i];
      rows.push(center.map((c, d) => c + (jitter[d] - 0.5) * 1.6));
      labels.push(cls);
    }
  });
  return {
    xs: tf.tensor2d(rows),
    ys: tf.oneHot(tf.tensor1d(labels, 'int32'), CENTERS.length) as tf.Tensor2D,
  };
}

async function main(): Promise<void> {
  const model = tf.sequential();
  model.add(tf.layers.dense({
    inputShape: [4], units: 16, activation: 'relu',
    kernelInitializer: tf.initializers.glorotUniform({ seed: 41 }),
  }));
  model.add(tf.layers.dense({
    units: 3, activation: 'softmax',
    kernelInitializer: tf.initializers.glorotUniform({ seed: 42 }),
  }));
  model.compile({ optimizer: tf.train.sgd(0.1), loss: 'categoricalCrossentropy',
                  metrics: ['accuracy'] });

  const { xs, ys } = blobs(120);
  const history = await model.fit(xs, ys, { epochs: 60, batchSize: 32, shuffle: false,
                                            verbose: 0 });
  const acc = history.history.acc ?? history.history.accuracy;
  console.log(`final training accuracy ${Number(acc[acc.length - 1]).toFixed(4)}`);

  await saveModelDir(model, path.join(ARTIFACTS, 'toy_dense_tfjs'));
  const plan = await exportModel(model,
    path.join(ARTIFACTS, 'toy_dense.pnf'),
    path.join(ARTIFACTS, 'toy_dense.probe.json'));
  console.log(`exported ${plan.layers.length} layers, ` +
              `${plan.classCount} classes, input ${JSON.stringify(plan.inputShape)}`);
}

main().catch(err => {
  console.error(err);
  process.exit(1);
});
