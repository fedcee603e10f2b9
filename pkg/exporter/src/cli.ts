/** CLI: export --model <model.json> --out <file.pnf> --probe <file.json> */

import { exportModel } from './export.js';
import { loadModelDir } from './modelio.js';

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    if (!argv[i].startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`malformed arguments near '${argv[i]}'`);
    }
    out.set(argv[i].slice(2), argv[i + 1]);
  }
  return out;
}

async function main(): Promise<void> {
  const [command, ...rest] = process.argv.slice(2);
  if (command !== 'export') {
    console.error('usage: export --model <model.json> --out <file.pnf> --probe <file.json>');
    process.exit(1);
  }
  const args = parseArgs(rest);
  for (const key of ['model', 'out', 'probe']) {
    if (!args.has(key)) {
      console.error(`missing required flag --${key}`);
      process.exit(1);
    }
  }
  const model = await loadModelDir(args.get('model')!);
  const plan = await exportModel(model, args.get('out')!, args.get('probe')!);
  console.log(`wrote ${args.get('out')} (${plan.layers.length} layers, ` +
              `${plan.classCount} classes)`);
}

main().catch(err => {
  console.error(String(err.message ?? err));
  process.exit(1);
});
