/** Command-line entry points: train on exports, infer on datasets. */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { loadExports, defaultTrainConfig, InputModality } from "./data.js";
import { trainAndSave } from "./train.js";
import { loadCheckpoint } from "./checkpoint.js";
import { inferDataset } from "./infer.js";

async function main(): Promise<void> {
  await yargs(hideBin(process.argv))
    .command(
      "train <checkpoint>",
      "Train the smeared-point classifier on export directories",
      (y) =>
        y
          .positional("checkpoint", { type: "string", demandOption: true })
          .option("export", { type: "string", array: true, demandOption: true,
                              describe: "Export directory (repeatable)" })
          .option("epochs", { type: "number", default: 20 })
          .option("batch-size", { type: "number", default: 4 })
          .option("lr", { type: "number", default: 1e-3 })
          .option("weight-decay", { type: "number", default: 1e-7 })
          .option("crop-size", { type: "number", default: 64 })
          .option("lr-schedule", { choices: ["constant", "cosine"] as const,
                                   default: "cosine" as const })
          .option("modality", { choices: ["depth", "omega", "depth+omega"] as const,
                                default: "depth+omega" as const })
          .option("base-channels", { type: "number", default: 8 })
          .option("alpha", { type: "number" })
          .option("beta", { type: "number" })
          .option("seed", { type: "number", default: 0 }),
      (argv) => {
        const data = loadExports(argv.export as string[]);
        const cfg = {
          ...defaultTrainConfig(),
          epochs: argv.epochs,
          batchSize: argv["batch-size"],
          lr: argv.lr,
          weightDecay: argv["weight-decay"],
          cropSize: argv["crop-size"],
          lrSchedule: argv["lr-schedule"],
          inputModality: argv.modality as InputModality,
          baseChannels: argv["base-channels"],
          alpha: argv.alpha ?? data.alpha,
          beta: argv.beta ?? data.beta,
          seed: argv.seed,
        };
        trainAndSave(data, cfg, argv.checkpoint as string, (log) => {
          console.log(
            `epoch ${log.epoch + 1}/${cfg.epochs}: loss ${log.meanLoss.toFixed(5)} ` +
            `(lr ${log.lr.toExponential(2)}, ${log.labeledPixels} labeled px)`,
          );
        });
        console.log(`checkpoint written to ${argv.checkpoint}`);
      },
    )
    .command(
      "infer <checkpoint> <dataset>",
      "Write per-frame score rasters into <dataset>/scores/",
      (y) =>
        y
          .positional("checkpoint", { type: "string", demandOption: true })
          .positional("dataset", { type: "string", demandOption: true })
          .option("modality", { choices: ["depth", "omega", "depth+omega"] as const,
                                describe: "Assert the checkpoint modality" }),
      (argv) => {
        const { net, meta } = loadCheckpoint(argv.checkpoint as string);
        const written = inferDataset(net, meta, argv.dataset as string, {
          expectModality: argv.modality as InputModality | undefined,
        });
        console.log(`scored ${written.length} frames`);
      },
    )
    .demandCommand(1)
    .strict()
    .fail((msg, err) => {
      console.error(msg ?? err?.message ?? "error");
      process.exit(err && !msg ? 3 : 2);
    })
    .parseAsync();
}

main();
