/**
 * Export entry point: plan the conversion, run the probe batch through the
 * framework model, and only then touch the filesystem (tmp file + rename),
 * so a failed export never leaves a partial artifact behind.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';
import * as tf from '@tensorflow/tfjs';

import { buildPnf, planExport, type ExportPlan } from './pnf.js';

export interface ProbeSidecar {
  input_shape: number[];
  inputs: number[][];
  outputs: number[][];
}

/** Deterministic probe inputs in [0, 1): a plain 48271 Lehmer generator. */
export function probeInputs(count: number, size: number, seed = 20240601): number[][] {
  let state = seed >>> 0 || 1;
  const next = () => {
    state = (state * 48271) % 2147483647;
    return state / 2147483647;
  };
  return Array.from({ length: count }, () =>
    Array.from({ length: size }, () => next()));
}

export async function buildProbe(model: tf.LayersModel, plan: ExportPlan,
                                 count = 32): Promise<ProbeSidecar> {
  const size = plan.inputShape.reduce((a, b) => a * b, 1);
  const inputs = probeInputs(count, size);
  const batch = tf.tensor(inputs.flat(), [count, ...plan.inputShape], 'float32');
  const out = model.predict(batch) as tf.Tensor;
  const data = await out.data();
  batch.dispose();
  out.dispose();
  const outputs: number[][] = [];
  for (let i = 0; i < count; i++) {
    outputs.push(Array.from(data.slice(i * plan.classCount, (i + 1) * plan.classCount)));
  }
  return { input_shape: plan.inputShape, inputs, outputs };
}

function writeAtomic(target: string, data: Buffer | string): void {
  const tmp = target + '.tmp';
  fs.mkdirSync(path.dirname(target), { recursive: true });
  fs.writeFileSync(tmp, data);
  fs.renameSync(tmp, target);
}

export async function exportModel(model: tf.LayersModel, outPath: string,
                                  probePath: string, probeCount = 32): Promise<ExportPlan> {
  const plan = await planExport(model);  // throws before anything is written
  const container = buildPnf(plan);
  const probe = await buildProbe(model, plan, probeCount);
  writeAtomic(outPath, container);
  writeAtomic(probePath, JSON.stringify(probe, null, 1) + '\n');
  return plan;
}
