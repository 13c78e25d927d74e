/** Unit conversions between model outputs and interchange log-probabilities. */

export type ScoreUnit = "bits_per_dim" | "nats";

/**
 * Generative models conventionally report negative log-likelihood in bits
 * per dimension; the interchange file carries log-probability in nats:
 * logp_nats = -(bits/dim) * d * ln 2.
 */
export function bitsPerDimToNats(bitsPerDim: number, dim: number): number {
  return -bitsPerDim * dim * Math.LN2;
}

export function natsToBitsPerDim(logpNats: number, dim: number): number {
  return -logpNats / (dim * Math.LN2);
}

export function toNats(score: number, unit: ScoreUnit, dim: number): number {
  return unit === "bits_per_dim" ? bitsPerDimToNats(score, dim) : score;
}
