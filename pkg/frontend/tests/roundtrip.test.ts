import { spawnSync } from "child_process";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { afterEach, beforeEach, describe, expect, it } from "vitest";

import { exportLogProbs } from "../src/exporter";

/**
 * End-to-end interchange check against the analysis package: the exporter's
 * CSV must ingest with zero warnings and its logp values must land in the
 * descriptor table bit-for-bit.
 */

let workDir: string;

beforeEach(() => {
  workDir = fs.mkdtempSync(path.join(os.tmpdir(), "roundtrip-"));
});

afterEach(() => {
  fs.rmSync(workDir, { recursive: true, force: true });
});

const SIDE = 8;
const DIM = SIDE * SIDE * 3;

function writePayload(name: string, seed: number): void {
  const data = new Float32Array(DIM);
  let state = seed;
  for (let i = 0; i < DIM; i++) {
    state = (state * 1103515245 + 12345) % 2147483648;
    data[i] = (state / 2147483648) * 1.2 - 0.6;
  }
  fs.writeFileSync(path.join(workDir, name), Buffer.from(data.buffer));
}

function writePairedManifest(): string {
  const images = [];
  const pairs = [];
  for (let i = 0; i < 3; i++) {
    const refId = `img_${i}`;
    const distId = `${refId}__distorted`;
    writePayload(`${refId}.f32`, 17 + i);
    writePayload(`${distId}.f32`, 1700 + i);
    for (const id of [refId, distId]) {
      images.push({
        id,
        path: `${id}.f32`,
        height: SIDE,
        width: SIDE,
        channels: 3,
        range: "symmetric",
      });
    }
    pairs.push({
      pair_id: refId,
      reference: refId,
      distorted: distId,
      epsilon: 0.2,
      rmse: 0.01,
    });
  }
  const manifestPath = path.join(workDir, "manifest.json");
  fs.writeFileSync(
    manifestPath,
    JSON.stringify({ schema_version: 1, images, pairs }, null, 2),
  );
  return manifestPath;
}

describe("primary-package round trip", () => {
  it("ingests with zero warnings and bit-equal logp fields", async () => {
    const manifestPath = writePairedManifest();
    const logpPath = path.join(workDir, "logp.csv");
    await exportLogProbs({
      manifestPath,
      modelPath: "stub:3.0",
      unit: "bits_per_dim",
      batchSize: 2,
      outPath: logpPath,
    });

    const descriptorsPath = path.join(workDir, "descriptors.csv");
    const run = spawnSync(
      "python3",
      [
        "-m",
        "percsense.cli",
        "surrogates",
        "--manifest",
        manifestPath,
        "--model",
        `external:${logpPath}`,
        "--out",
        descriptorsPath,
      ],
      { encoding: "utf-8" },
    );
    expect(run.status, run.stderr).toBe(0);
    expect(run.stderr.toLowerCase()).not.toContain("warning");

    const exported = new Map<string, string>();
    for (const line of fs
      .readFileSync(logpPath, "utf-8")
      .trim()
      .split("\n")
      .slice(1)) {
      const [id, value] = line.split(",");
      exported.set(id, value);
    }
    const rows = fs
      .readFileSync(descriptorsPath, "utf-8")
      .trim()
      .split("\n");
    const header = rows[0].split(",");
    const logpX = header.indexOf("logp_x");
    const logpXt = header.indexOf("logp_xt");
    expect(rows.length).toBe(4);
    for (const row of rows.slice(1)) {
      const cells = row.split(",");
      const pairId = cells[0];
      // Bit-equality: both sides must parse to the identical float64.
      expect(Number(cells[logpX])).toBe(Number(exported.get(pairId)));
      expect(Number(cells[logpXt])).toBe(
        Number(exported.get(`${pairId}__distorted`)),
      );
    }
  });
});
