/** Wire types of the rollout-batch JSONL stream produced upstream. */

export interface BatchCandidate {
  sample_index: number;
  raw_response: string;
  extracted_code: string | null;
  token_logprobs: number[] | null;
}

export interface RolloutGroup {
  problem_id: string;
  prompt: string;
  candidates: BatchCandidate[];
  rewards: number[];
  advantages: number[];
}

export interface TrainerConfig {
  learningRate: number;
  groupSize: number;
  maxCompletionLength: number;
  grpoBeta: number;
  epochs: number;
  clipEpsilon: number;
  /** optimizer steps per loaded batch; 1 keeps the update on-policy */
  innerSteps: number;
}

export const DEFAULT_CONFIG: TrainerConfig = {
  learningRate: 1e-6,
  groupSize: 4,
  maxCompletionLength: 2048,
  grpoBeta: 0.0,
  epochs: 3,
  clipEpsilon: 0.2,
  innerSteps: 1,
};

export class BatchSchemaError extends Error {}
export class NonFiniteLossError extends Error {}
