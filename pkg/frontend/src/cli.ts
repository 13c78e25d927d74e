#!/usr/bin/env node
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { ScoreUnit } from "./convert";
import { exportLogProbs } from "./exporter";

export async function main(argv: string[]): Promise<number> {
  const args = await yargs(argv)
    .scriptName("export-logprobs")
    .usage(
      "$0 --manifest M --model PATH --unit bits_per_dim|nats --batch B --out CSV",
    )
    .option("manifest", { type: "string", demandOption: true })
    .option("model", {
      type: "string",
      demandOption: true,
      describe: "Model checkpoint; stub:<v> or stubfile:<path> for the test stub",
    })
    .option("unit", {
      choices: ["bits_per_dim", "nats"] as const,
      demandOption: true,
      describe: "Unit the model reports (must be declared explicitly)",
    })
    .option("batch", { type: "number", default: 64 })
    .option("out", { type: "string", demandOption: true })
    .option("allow-partial", { type: "boolean", default: false })
    .strict()
    .help()
    .parse();

  try {
    const result = await exportLogProbs({
      manifestPath: args.manifest,
      modelPath: args.model,
      unit: args.unit as ScoreUnit,
      batchSize: args.batch,
      outPath: args.out,
      allowPartial: args["allow-partial"],
    });
    console.log(
      `scored ${result.scored}/${result.total} images -> ${result.outPath}`,
    );
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 2;
  }
}

if (require.main === module) {
  main(hideBin(process.argv)).then((code) => {
    process.exitCode = code;
  });
}
