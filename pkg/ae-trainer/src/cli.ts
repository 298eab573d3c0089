/**
 * CLI: `train --data <container> --eta <ratio> --out <dir>` trains a model
 * on an exported channel dataset and stores weights plus evaluation
 * results; `export-profile --model <dir> --out <file>` writes the profile
 * JSON the simulator consumes.
 */
import * as fs from 'fs';
import * as path from 'path';
import {initBackend} from './backend';
import {loadDataset, splitIndices} from './dataset';
import {evaluateModel} from './evaluate';
import {CsiAutoencoder, latentDim} from './model';
import {exportProfile} from './profile';
import {trainModel} from './train';

function parseArgs(argv: string[]): Record<string, string> {
  const out: Record<string, string> = {};
  for (let i = 0; i < argv.length; i++) {
    if (argv[i].startsWith('--')) {
      const key = argv[i].slice(2);
      out[key] = i + 1 < argv.length && !argv[i + 1].startsWith('--') ? argv[++i] : 'true';
    }
  }
  return out;
}

function need(args: Record<string, string>, key: string): string {
  if (!(key in args)) {
    console.error(`missing required option --${key}`);
    process.exit(2);
  }
  return args[key];
}

async function cmdTrain(args: Record<string, string>): Promise<void> {
  await initBackend();
  const dataPath = need(args, 'data');
  const eta = Number(need(args, 'eta'));
  const outDir = need(args, 'out');
  const epochs = Number(args.epochs ?? 10);
  const limit = args.limit ? Number(args.limit) : undefined;

  const ds = loadDataset(dataPath, Number(args.ng ?? 16), limit);
  console.log(`dataset: ${ds.n} samples of ${ds.nVs}x${ds.nT} ` +
              `(${ds.los.filter(Boolean).length} LOS)`);
  const split = splitIndices(ds.n, Number(args['test-fraction'] ?? 0.15));
  const model = new CsiAutoencoder({
    eta, nVs: ds.nVs, nT: ds.nT, nSc: ds.nSc, nG: ds.nG,
    lambdaRate: args.lambda ? Number(args.lambda) : undefined,
  });
  console.log(`model: latent ${model.m} (eta ${eta}), rate weight ${model.lambdaRate}`);
  const report = trainModel(model, ds, split.train, {
    epochs,
    batchSize: Number(args.batch ?? 32),
    learningRate: Number(args.lr ?? 2e-3),
    verbose: true,
  });
  const evalResult = evaluateModel(model, ds, split.test);
  console.log(`test: LOS ${evalResult.los.corrMean.toFixed(4)} ` +
              `NLOS ${evalResult.nlos.corrMean.toFixed(4)} ` +
              `bits median ${evalResult.sizeBits.median}`);
  model.save(outDir);
  fs.writeFileSync(path.join(outDir, 'eval.json'), JSON.stringify({
    eta, latent_dim: model.m,
    los: evalResult.los, nlos: evalResult.nlos, size_bits: evalResult.sizeBits,
    loss_curve: report.lossCurve, mse_curve: report.mseCurve,
    rate_curve: report.rateCurve,
  }, null, 2));
  console.log(`model and evaluation written to ${outDir}`);
}

async function cmdExportProfile(args: Record<string, string>): Promise<void> {
  await initBackend();
  const modelDir = need(args, 'model');
  const outFile = need(args, 'out');
  const evalPath = path.join(modelDir, 'eval.json');
  if (!fs.existsSync(evalPath)) {
    console.error(`no eval.json in ${modelDir}; run train first`);
    process.exit(2);
  }
  const stored = JSON.parse(fs.readFileSync(evalPath, 'utf8'));
  const result = {
    los: stored.los, nlos: stored.nlos, sizeBits: stored.size_bits,
    correlations: [], bits: [], losslessChecked: true,
  };
  const profile = exportProfile(result as any, stored.eta, stored.latent_dim, outFile);
  console.log(`profile written to ${outFile} ` +
              `(eta ${profile.eta}, median ${profile.size_bits.median} bits)`);
}

async function main(): Promise<void> {
  const [command, ...rest] = process.argv.slice(2);
  const args = parseArgs(rest);
  if (command === 'train') {
    await cmdTrain(args);
  } else if (command === 'export-profile') {
    await cmdExportProfile(args);
  } else {
    console.error('usage: cli.js train --data <file> --eta <r> --out <dir> ' +
                  '[--epochs N --batch N --lr X --lambda X --limit N]\n' +
                  '       cli.js export-profile --model <dir> --out <file>');
    process.exit(2);
  }
}

main().catch(err => {
  console.error(err.stack ?? String(err));
  process.exit(3);
});
