/**
 * PNF container assembly: magic "PNF1", little-endian u32 header length, a
 * UTF-8 JSON header describing the ordered layers and declared weight
 * shapes, then the raw float32 weight blobs concatenated in header order.
 *
 * Dense kernels are written (in_dim, out_dim) and conv kernels
 * (kh, kw, in_ch, out_ch) — exactly the layout tfjs uses, so no
 * transposition is applied; the header records this as dense_layout.
 */

import type * as tf from '@tensorflow/tfjs';

export const PNF_MAGIC = 'PNF1';

export interface WeightSpec {
  name: string;
  shape: number[];
}

export interface PlannedLayer {
  kind: string;
  hyperparams: Record<string, number>;
  weights: WeightSpec[];
  /** row-major float32 blobs aligned with `weights` */
  tensors: Float32Array[];
  /** which framework layer produced this entry (for error messages) */
  source: string;
}

export interface ExportPlan {
  classCount: number;
  inputShape: number[];
  layers: PlannedLayer[];
}

export class ExportError extends Error {}

const SUPPORTED_ACTIVATIONS = new Set(['linear', 'relu', 'softmax']);

function activationLayer(name: string, source: string): PlannedLayer | null {
  if (name === 'linear') return null;
  if (name === 'relu' || name === 'softmax') {
    return { kind: name, hyperparams: {}, weights: [], tensors: [], source };
  }
  throw new ExportError(
    `layer ${source}: unsupported activation '${name}' (only relu/softmax are portable)`);
}

async function tensorData(t: tf.Tensor): Promise<Float32Array> {
  const data = await t.data();
  return data instanceof Float32Array ? data : new Float32Array(data);
}

/** Walk a sequential model and map each framework layer to PNF entries. */
export async function planExport(model: tf.LayersModel): Promise<ExportPlan> {
  const batchShape = model.layers.length
    ? (model.layers[0].batchInputShape as Array<number | null>)
    : null;
  if (!batchShape) throw new ExportError('model has no layers');
  const inputShape = batchShape.slice(1).map(d => {
    if (d === null) throw new ExportError('model input shape must be fully defined');
    return d;
  });

  const planned: PlannedLayer[] = [];
  for (const layer of model.layers) {
    const className = layer.getClassName();
    const source = `${className}(${layer.name})`;
    const config = layer.getConfig() as Record<string, unknown>;

    if (className === 'InputLayer') continue;

    if (className === 'Dense') {
      const [kernel, bias] = layer.getWeights();
      const inDim = kernel.shape[0] as number;
      const outDim = kernel.shape[1] as number;
      planned.push({
        kind: 'dense',
        hyperparams: { in_dim: inDim, out_dim: outDim },
        weights: [
          { name: 'w', shape: [inDim, outDim] },
          { name: 'b', shape: [outDim] },
        ],
        tensors: [await tensorData(kernel), await tensorData(bias)],
        source,
      });
      const act = activationLayer(String(config.activation ?? 'linear'), source);
      if (act) planned.push(act);
      continue;
    }

    if (className === 'Conv2D') {
      const [kernel, bias] = layer.getWeights();
      const [kh, kw, inCh, outCh] = kernel.shape as number[];
      const strides = config.strides as number[] | number;
      const stride = Array.isArray(strides) ? strides[0] : strides;
      if (Array.isArray(strides) && strides[0] !== strides[1]) {
        throw new ExportError(`layer ${source}: non-square strides are not portable`);
      }
      let padding: number;
      const padMode = String(config.padding);
      if (padMode === 'valid') {
        padding = 0;
      } else if (padMode === 'same') {
        if (stride !== 1 || kh % 2 === 0 || kw % 2 === 0 || kh !== kw) {
          throw new ExportError(
            `layer ${source}: 'same' padding is only portable for odd square kernels with stride 1`);
        }
        padding = (kh - 1) / 2;
      } else {
        throw new ExportError(`layer ${source}: unsupported padding mode '${padMode}'`);
      }
      planned.push({
        kind: 'conv2d',
        hyperparams: {
          kernel_h: kh, kernel_w: kw, in_ch: inCh, out_ch: outCh,
          stride, padding,
        },
        weights: [
          { name: 'kernel', shape: [kh, kw, inCh, outCh] },
          { name: 'bias', shape: [outCh] },
        ],
        tensors: [await tensorData(kernel), await tensorData(bias)],
        source,
      });
      const act = activationLayer(String(config.activation ?? 'linear'), source);
      if (act) planned.push(act);
      continue;
    }

    if (className === 'MaxPooling2D') {
      const pool = config.poolSize as number[] | number;
      const window = Array.isArray(pool) ? pool[0] : pool;
      const strides = (config.strides ?? pool) as number[] | number;
      const stride = Array.isArray(strides) ? strides[0] : strides;
      planned.push({
        kind: 'maxpool2d', hyperparams: { window, stride },
        weights: [], tensors: [], source,
      });
      continue;
    }

    if (className === 'Dropout') {
      planned.push({
        kind: 'dropout', hyperparams: { rate: config.rate as number },
        weights: [], tensors: [], source,
      });
      continue;
    }

    if (className === 'Flatten') {
      planned.push({ kind: 'flatten', hyperparams: {}, weights: [], tensors: [], source });
      continue;
    }

    if (className === 'Activation') {
      const act = activationLayer(String(config.activation), source);
      if (act) planned.push(act);
      continue;
    }

    throw new ExportError(`layer ${source}: unsupported layer kind`);
  }

  if (!planned.length || planned[planned.length - 1].kind !== 'softmax') {
    throw new ExportError('model must end with a softmax activation');
  }
  const lastDense = [...planned].reverse().find(l => l.kind === 'dense');
  if (!lastDense) throw new ExportError('model has no dense classification head');

  return {
    classCount: lastDense.hyperparams.out_dim,
    inputShape,
    layers: planned,
  };
}

/** Assemble the container bytes (pure function of the plan). */
export function buildPnf(plan: ExportPlan): Buffer {
  const header = {
    format_version: 1,
    class_count: plan.classCount,
    input_shape: plan.inputShape,
    dense_layout: 'in_out',
    layers: plan.layers.map(l => {
      const entry: Record<string, unknown> = { kind: l.kind, ...l.hyperparams };
      if (l.weights.length) entry.weights = l.weights;
      return entry;
    }),
  };
  const headerBytes = Buffer.from(JSON.stringify(header), 'utf-8');
  const lengthField = Buffer.alloc(4);
  lengthField.writeUInt32LE(headerBytes.length, 0);

  const blobs: Buffer[] = [];
  for (const layer of plan.layers) {
    layer.weights.forEach((spec, i) => {
      const expected = spec.shape.reduce((a, b) => a * b, 1);
      const data = layer.tensors[i];
      if (data.length !== expected) {
        throw new ExportError(
          `layer ${layer.source}: tensor '${spec.name}' has ${data.length} elements, ` +
          `declared shape needs ${expected}`);
      }
      // Float32Array is little-endian on every supported node platform
      blobs.push(Buffer.from(data.buffer.slice(data.byteOffset,
                                               data.byteOffset + data.byteLength)));
    });
  }
  return Buffer.concat([Buffer.from(PNF_MAGIC, 'ascii'), lengthField, headerBytes, ...blobs]);
}
