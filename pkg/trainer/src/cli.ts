#!/usr/bin/env node
/**
 * formaforge-train --batch <file> [--config <json>]: load a rollout batch,
 * apply one update step to a fresh toy policy, and report the loss.  The
 * heavy lifting for real models lives behind the same grpoStep surface.
 */

import { readFileSync } from 'node:fs';

import { loadBatch } from './batch.js';
import { ToyPolicy } from './model.js';
import { grpoStep } from './trainer.js';
import { DEFAULT_CONFIG, TrainerConfig } from './types.js';

function parseArgs(argv: string[]): Map<string, string> {
  const args = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key?.startsWith('--') || value === undefined) {
      throw new Error(`cannot parse arguments near ${key ?? '<end>'}`);
    }
    args.set(key.slice(2), value);
  }
  return args;
}

function main(): void {
  const args = parseArgs(process.argv.slice(2));
  const batchPath = args.get('batch');
  if (!batchPath) {
    console.error('usage: formaforge-train --batch <rollout.jsonl> [--config <config.json>]');
    process.exit(2);
  }
  let cfg: TrainerConfig = { ...DEFAULT_CONFIG };
  const configPath = args.get('config');
  if (configPath) {
    cfg = { ...cfg, ...(JSON.parse(readFileSync(configPath, 'utf-8')) as Partial<TrainerConfig>) };
  }
  const groups = loadBatch(batchPath);
  if (groups.length === 0) {
    console.log('empty batch: zero update steps');
    return;
  }
  const model = ToyPolicy.fromTexts(
    groups.flatMap((g) => g.candidates.map((c) => c.raw_response)),
  );
  const result = grpoStep(groups, model, cfg);
  console.log(
    JSON.stringify({
      groups: groups.length,
      loss: result.loss,
      grad_norm: result.gradNorm,
      applied: result.applied,
    }),
  );
}

main();
