/**
 * The policy-update step: loss is the negated clipped surrogate with the
 * same token-mean-then-sequence-mean aggregation as the reference
 * implementation, evaluated on differentiable logprobs from the model.
 * Old (sampling-policy) logprobs come from the batch when present and are
 * otherwise recomputed once per step under the frozen pre-update weights.
 */

import { appendFileSync, existsSync, mkdirSync, readFileSync, writeFileSync } from 'node:fs';
import { join } from 'node:path';
import { spawnSync } from 'node:child_process';

import * as tf from '@tensorflow/tfjs';

import { loadBatch } from './batch.js';
import { ToyPolicy } from './model.js';
import { NonFiniteLossError, RolloutGroup, TrainerConfig } from './types.js';

interface PreparedSequence {
  completion: string;
  oldLogprobs: number[];
  advantage: number;
}

interface PreparedGroup {
  sequences: PreparedSequence[];
}

/** Pick the trainable completions out of a group: candidates with text the
 * model can tokenize.  Empty padded candidates carry no tokens and are
 * skipped (their advantage contributed to the group statistics upstream). */
export function prepareGroups(
  groups: RolloutGroup[],
  model: ToyPolicy,
  cfg: TrainerConfig,
): PreparedGroup[] {
  const prepared: PreparedGroup[] = [];
  for (const group of groups) {
    const sequences: PreparedSequence[] = [];
    group.candidates.forEach((cand, i) => {
      const completion = cand.raw_response;
      if (model.encode(completion).length === 0) return;
      const advantage = group.advantages[i]!;
      const fromBatch = cand.token_logprobs;
      const oldLogprobs =
        fromBatch !== null && fromBatch.length > 0
          ? fromBatch.slice(0, cfg.maxCompletionLength)
          : model.frozenLogprobs(completion, cfg.maxCompletionLength);
      sequences.push({ completion, oldLogprobs, advantage });
    });
    if (sequences.length > 0) prepared.push({ sequences });
  }
  return prepared;
}

/** Differentiable loss: -(1/G) sum_i (1/|o_i|) sum_t min(r*A, clip(r)*A). */
export function surrogateLoss(
  model: ToyPolicy,
  prepared: PreparedGroup[],
  cfg: TrainerConfig,
): tf.Scalar {
  return tf.tidy(() => {
    let total: tf.Scalar = tf.scalar(0);
    let nGroups = 0;
    for (const group of prepared) {
      let groupSum: tf.Scalar = tf.scalar(0);
      for (const seq of group.sequences) {
        const newLp = model.completionLogprobs(seq.completion, cfg.maxCompletionLength);
        const n = Math.min(newLp.shape[0], seq.oldLogprobs.length);
        const newHead = newLp.slice(0, n);
        const oldHead = tf.tensor1d(seq.oldLogprobs.slice(0, n));
        const ratio = tf.exp(tf.sub(newHead, oldHead));
        const clipped = tf.clipByValue(ratio, 1 - cfg.clipEpsilon, 1 + cfg.clipEpsilon);
        const adv = tf.scalar(seq.advantage);
        const term = tf.minimum(tf.mul(ratio, adv), tf.mul(clipped, adv));
        groupSum = tf.add(groupSum, tf.mean(term)) as tf.Scalar;
      }
      total = tf.add(total, tf.div(groupSum, group.sequences.length)) as tf.Scalar;
      nGroups += 1;
    }
    if (nGroups === 0) return tf.scalar(0);
    return tf.neg(tf.div(total, nGroups)) as tf.Scalar;
  });
}

export interface StepResult {
  loss: number;
  gradNorm: number;
  applied: boolean;
}

/** One optimizer step on one batch.  A non-finite loss aborts the step
 * without touching the weights. */
export function grpoStep(
  groups: RolloutGroup[],
  model: ToyPolicy,
  cfg: TrainerConfig,
  optimizer?: tf.Optimizer,
): StepResult {
  const prepared = prepareGroups(groups, model, cfg);
  if (prepared.length === 0) {
    return { loss: 0, gradNorm: 0, applied: false };
  }
  const opt = optimizer ?? tf.train.adam(cfg.learningRate);
  const { value, grads } = tf.variableGrads(
    () => surrogateLoss(model, prepared, cfg),
    [model.logits],
  );
  const loss = value.dataSync()[0]!;
  let sq = 0;
  for (const name of Object.keys(grads)) {
    const data = grads[name]!.dataSync();
    for (let i = 0; i < data.length; i++) sq += data[i]! * data[i]!;
  }
  const gradNorm = Math.sqrt(sq);
  if (!Number.isFinite(loss)) {
    value.dispose();
    Object.values(grads).forEach((g) => g.dispose());
    throw new NonFiniteLossError(`aborting step: non-finite loss ${loss}`);
  }
  opt.applyGradients(grads);
  value.dispose();
  Object.values(grads).forEach((g) => g.dispose());
  return { loss, gradNorm, applied: true };
}

/** Gradient norm of the loss at the current weights, no update. */
export function lossGradientNorm(
  groups: RolloutGroup[],
  model: ToyPolicy,
  cfg: TrainerConfig,
): number {
  const prepared = prepareGroups(groups, model, cfg);
  if (prepared.length === 0) return 0;
  const { value, grads } = tf.variableGrads(
    () => surrogateLoss(model, prepared, cfg),
    [model.logits],
  );
  let sq = 0;
  for (const name of Object.keys(grads)) {
    const data = grads[name]!.dataSync();
    for (let i = 0; i < data.length; i++) sq += data[i]! * data[i]!;
  }
  value.dispose();
  Object.values(grads).forEach((g) => g.dispose());
  return Math.sqrt(sq);
}

// ---------------------------------------------------------------- training

export interface TrainOptions {
  /** upstream pipeline config (endpoints + checker) */
  pipelineConfig: string;
  problems: string;
  endpoint: string;
  judge: string;
  outDir: string;
  iterations: number;
  /** command used to produce a batch; the default shells out to the
   * upstream CLI */
  rolloutCommand?: string[];
  cwd?: string;
}

interface ManifestLine {
  iteration: number;
  batch: string;
  checkpoint: string;
  mean_reward: number;
  loss: number;
  created_at: string;
}

function readManifest(path: string): ManifestLine[] {
  if (!existsSync(path)) return [];
  return readFileSync(path, 'utf-8')
    .split('\n')
    .filter((l) => l.trim())
    .map((l) => JSON.parse(l) as ManifestLine);
}

function meanReward(groups: RolloutGroup[]): number {
  let total = 0;
  let n = 0;
  for (const g of groups) {
    for (const r of g.rewards) {
      total += r;
      n += 1;
    }
  }
  return n ? total / n : 0;
}

/**
 * Alternate batch production (via the upstream rollout CLI) with update
 * steps.  Each iteration appends one manifest line; re-running with the
 * same outDir resumes after the last recorded iteration and restores the
 * corresponding checkpoint.
 */
export function train(
  model: ToyPolicy,
  cfg: TrainerConfig,
  opts: TrainOptions,
): ManifestLine[] {
  mkdirSync(opts.outDir, { recursive: true });
  const manifestPath = join(opts.outDir, 'trainer-manifest.jsonl');
  const done = readManifest(manifestPath);
  let startAt = 0;
  if (done.length > 0) {
    const last = done[done.length - 1]!;
    startAt = last.iteration + 1;
    const restored = ToyPolicy.restore(
      JSON.parse(readFileSync(last.checkpoint, 'utf-8')),
    );
    model.logits.assign(restored.logits);
    restored.dispose();
  }

  const optimizer = tf.train.adam(cfg.learningRate);
  const lines: ManifestLine[] = [...done];
  for (let iteration = startAt; iteration < opts.iterations; iteration++) {
    const batchPath = join(opts.outDir, `iter-${iteration}.batch.jsonl`);
    const command = opts.rolloutCommand ?? ['formaforge'];
    const args = [
      ...command.slice(1),
      '--config', opts.pipelineConfig,
      'rollout',
      '--problems', opts.problems,
      '--out', batchPath,
      '--endpoint', opts.endpoint,
      '--judge', opts.judge,
      '--group-size', String(cfg.groupSize),
      '--run-id', `trainer-iter-${iteration}`,
    ];
    const result = spawnSync(command[0]!, args, {
      cwd: opts.cwd,
      encoding: 'utf-8',
    });
    if (result.status !== 0) {
      throw new Error(
        `rollout failed at iteration ${iteration} (exit ${result.status}):\n` +
          `${result.stdout}\n${result.stderr}`,
      );
    }

    const groups = loadBatch(batchPath);
    let loss = 0;
    for (let inner = 0; inner < cfg.innerSteps; inner++) {
      loss = grpoStep(groups, model, cfg, optimizer).loss;
    }

    const checkpointPath = join(opts.outDir, `iter-${iteration}.checkpoint.json`);
    writeFileSync(checkpointPath, JSON.stringify(model.snapshot()));
    const line: ManifestLine = {
      iteration,
      batch: batchPath,
      checkpoint: checkpointPath,
      mean_reward: meanReward(groups),
      loss,
      created_at: new Date().toISOString(),
    };
    appendFileSync(manifestPath, JSON.stringify(line) + '\n');
    lines.push(line);
  }
  return lines;
}
