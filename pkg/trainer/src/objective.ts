/**
 * Reference (float64, tensor-free) evaluation of the clipped surrogate:
 * per token min(ratio * adv, clip(ratio, 1-eps, 1+eps) * adv) with
 * ratio = exp(new - old); token-mean per sequence, then mean over the
 * group.  The differentiable loss in trainer.ts mirrors this aggregation
 * exactly; shared fixtures hold both to the same expected values.
 */

export function clippedSurrogate(
  newLogprobs: number[][],
  oldLogprobs: number[][],
  advantages: number[],
  clipEpsilon: number,
): number {
  const g = newLogprobs.length;
  if (oldLogprobs.length !== g || advantages.length !== g) {
    throw new Error(
      `group size mismatch: ${g} new sequences, ${oldLogprobs.length} old, ` +
        `${advantages.length} advantages`,
    );
  }
  if (g === 0) throw new Error('empty group');
  const lo = 1 - clipEpsilon;
  const hi = 1 + clipEpsilon;
  let total = 0;
  for (let i = 0; i < g; i++) {
    const seqNew = newLogprobs[i]!;
    const seqOld = oldLogprobs[i]!;
    if (seqNew.length !== seqOld.length) {
      throw new Error(`sequence ${i}: ${seqNew.length} new tokens vs ${seqOld.length} old`);
    }
    if (seqNew.length === 0) throw new Error(`sequence ${i}: zero-length sequence`);
    const adv = advantages[i]!;
    let seqSum = 0;
    for (let t = 0; t < seqNew.length; t++) {
      const ratio = Math.exp(seqNew[t]! - seqOld[t]!);
      if (!Number.isFinite(ratio)) {
        throw new Error(`sequence ${i} token ${t}: non-finite ratio`);
      }
      const clipped = Math.min(Math.max(ratio, lo), hi);
      seqSum += Math.min(ratio * adv, clipped * adv);
    }
    total += seqSum / seqNew.length;
  }
  return total / g;
}
