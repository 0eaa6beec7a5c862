/**
 * Rollout-batch loading.  One JSON group per line; a malformed line or a
 * missing field is an error naming the line, never a silently defaulted
 * record.
 */

import { readFileSync } from 'node:fs';

import { BatchCandidate, BatchSchemaError, RolloutGroup } from './types.js';

function need<T>(obj: Record<string, unknown>, key: string, where: string): T {
  if (!(key in obj) || obj[key] === undefined) {
    throw new BatchSchemaError(`${where}: missing required field '${key}'`);
  }
  return obj[key] as T;
}

function parseCandidate(raw: unknown, where: string): BatchCandidate {
  if (typeof raw !== 'object' || raw === null) {
    throw new BatchSchemaError(`${where}: candidate is not an object`);
  }
  const obj = raw as Record<string, unknown>;
  const candidate: BatchCandidate = {
    sample_index: need<number>(obj, 'sample_index', where),
    raw_response: need<string>(obj, 'raw_response', where),
    extracted_code: (obj.extracted_code ?? null) as string | null,
    token_logprobs: (obj.token_logprobs ?? null) as number[] | null,
  };
  if (candidate.token_logprobs !== null) {
    for (const lp of candidate.token_logprobs) {
      if (lp > 0) {
        throw new BatchSchemaError(`${where}: positive token logprob ${lp}`);
      }
    }
  }
  return candidate;
}

export function parseGroup(raw: unknown, where: string): RolloutGroup {
  if (typeof raw !== 'object' || raw === null) {
    throw new BatchSchemaError(`${where}: group is not an object`);
  }
  const obj = raw as Record<string, unknown>;
  const candidates = need<unknown[]>(obj, 'candidates', where).map((c, i) =>
    parseCandidate(c, `${where} candidate ${i}`),
  );
  const group: RolloutGroup = {
    problem_id: need<string>(obj, 'problem_id', where),
    prompt: need<string>(obj, 'prompt', where),
    candidates,
    rewards: need<number[]>(obj, 'rewards', where),
    advantages: need<number[]>(obj, 'advantages', where),
  };
  const g = group.candidates.length;
  if (group.rewards.length !== g || group.advantages.length !== g) {
    throw new BatchSchemaError(
      `${where}: ${g} candidates but ${group.rewards.length} rewards / ` +
        `${group.advantages.length} advantages`,
    );
  }
  return group;
}

export function loadBatch(path: string): RolloutGroup[] {
  const text = readFileSync(path, 'utf-8');
  const groups: RolloutGroup[] = [];
  const lines = text.split('\n');
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i]!.trim();
    if (!line) continue;
    let raw: unknown;
    try {
      raw = JSON.parse(line);
    } catch (err) {
      throw new BatchSchemaError(`${path}:${i + 1}: malformed JSON: ${err}`);
    }
    groups.push(parseGroup(raw, `${path}:${i + 1}`));
  }
  return groups;
}
