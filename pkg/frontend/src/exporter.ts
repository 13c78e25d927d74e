import * as fs from "fs";
import * as path from "path";

import { BatchImage, ExportJob, stubAdapter } from "./adapter";
import { toNats } from "./convert";
import { loadManifest, loadPayload } from "./manifest";

export class ExportError extends Error {}

export interface ExportResult {
  outPath: string;
  sidecarPath: string;
  scored: number;
  total: number;
}

/**
 * Score every manifest image and write the `image_id,logp_nats` CSV.
 *
 * Payloads are validated against their declared shapes before scoring.
 * Unless `allowPartial` is set, missing scores fail the export instead of
 * writing an incomplete file. Output is written atomically (temp file +
 * rename) together with a sidecar metadata JSON recording the unit
 * conversion applied.
 */
export async function exportLogProbs(job: ExportJob): Promise<ExportResult> {
  if (job.batchSize < 1) {
    throw new ExportError(`batch size must be >= 1, got ${job.batchSize}`);
  }
  if (job.unit !== "bits_per_dim" && job.unit !== "nats") {
    throw new ExportError(`unit must be declared as bits_per_dim or nats`);
  }
  const manifest = loadManifest(job.manifestPath);
  const adapter = job.adapter ?? stubAdapter;
  const model = await adapter.load(job.modelPath);

  const images: BatchImage[] = manifest.images.map((entry) => ({
    id: entry.id,
    data: loadPayload(manifest, entry),
    dim: entry.height * entry.width * entry.channels,
  }));

  const rows: Array<[string, number]> = [];
  const failures: string[] = [];
  for (let start = 0; start < images.length; start += job.batchSize) {
    const batch = images.slice(start, start + job.batchSize);
    let scores: number[];
    try {
      scores = await model.scoreBatch(batch);
    } catch (err) {
      if (!job.allowPartial) {
        throw new ExportError(
          `scoring failed: ${err} (pass --allow-partial to skip failures)`,
        );
      }
      failures.push(...batch.map((img) => img.id));
      continue;
    }
    if (scores.length !== batch.length) {
      throw new ExportError(
        `adapter returned ${scores.length} scores for a batch of ${batch.length}`,
      );
    }
    batch.forEach((img, i) => {
      const nats = toNats(scores[i], job.unit, img.dim);
      if (!Number.isFinite(nats)) {
        throw new ExportError(`non-finite score for image ${img.id}`);
      }
      rows.push([img.id, nats]);
    });
  }

  if (rows.length < images.length && !job.allowPartial) {
    const missing = images
      .filter((img) => !rows.some(([id]) => id === img.id))
      .map((img) => img.id);
    throw new ExportError(
      `incomplete coverage (${rows.length}/${images.length}); ` +
        `missing: ${missing.join(", ")} (pass --allow-partial to write anyway)`,
    );
  }

  const lines = ["image_id,logp_nats"];
  for (const [id, nats] of rows) {
    lines.push(`${id},${nats}`);
  }
  const payload = lines.join("\n") + "\n";
  fs.mkdirSync(path.dirname(path.resolve(job.outPath)), { recursive: true });
  const tmpPath = job.outPath + ".tmp";
  fs.writeFileSync(tmpPath, payload, "utf-8");
  fs.renameSync(tmpPath, job.outPath);

  const sidecarPath = job.outPath + ".meta.json";
  const sidecar = {
    manifest: path.resolve(job.manifestPath),
    model: model.name,
    unit: job.unit,
    conversion:
      job.unit === "bits_per_dim"
        ? "logp_nats = -(bits/dim) * d * ln 2"
        : "passthrough (model already reports log-probability in nats)",
    images_total: images.length,
    images_scored: rows.length,
    failed_ids: failures,
    batch_size: job.batchSize,
  };
  fs.writeFileSync(sidecarPath, JSON.stringify(sidecar, null, 2) + "\n", "utf-8");
  return {
    outPath: job.outPath,
    sidecarPath,
    scored: rows.length,
    total: images.length,
  };
}
