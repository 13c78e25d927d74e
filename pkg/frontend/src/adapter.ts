import * as fs from "fs";

import { ScoreUnit } from "./convert";

export interface BatchImage {
  id: string;
  data: Float32Array;
  dim: number;
}

/**
 * The deep model stays behind this two-function surface: load a checkpoint,
 * score a batch. Scores are in the unit the export job declares.
 */
export interface ModelAdapter {
  load(modelPath: string): Promise<LoadedModel>;
}

export interface LoadedModel {
  name: string;
  scoreBatch(images: BatchImage[]): Promise<number[]>;
}

export class AdapterError extends Error {}

/**
 * Deterministic stub for tests and dry runs.
 *
 *   stub:<value>       every image scores <value>
 *   stubfile:<path>    JSON map of image id -> score; missing ids error
 */
export const stubAdapter: ModelAdapter = {
  async load(modelPath: string): Promise<LoadedModel> {
    if (modelPath.startsWith("stub:")) {
      const value = Number(modelPath.slice("stub:".length));
      if (!Number.isFinite(value)) {
        throw new AdapterError(`stub score must be a number: ${modelPath}`);
      }
      return {
        name: modelPath,
        scoreBatch: async (images) => images.map(() => value),
      };
    }
    if (modelPath.startsWith("stubfile:")) {
      const filePath = modelPath.slice("stubfile:".length);
      if (!fs.existsSync(filePath)) {
        throw new AdapterError(`stub score file not found: ${filePath}`);
      }
      const scores = JSON.parse(fs.readFileSync(filePath, "utf-8")) as Record<
        string,
        number
      >;
      return {
        name: modelPath,
        scoreBatch: async (images) =>
          images.map((img) => {
            const score = scores[img.id];
            if (typeof score !== "number") {
              throw new AdapterError(`stub file has no score for image ${img.id}`);
            }
            return score;
          }),
      };
    }
    throw new AdapterError(
      `no adapter for model ${modelPath}; use stub:<value> or stubfile:<path>`,
    );
  },
};

export interface ExportJob {
  manifestPath: string;
  modelPath: string;
  unit: ScoreUnit;
  batchSize: number;
  outPath: string;
  allowPartial?: boolean;
  adapter?: ModelAdapter;
}
