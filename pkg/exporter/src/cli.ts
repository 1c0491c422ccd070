#!/usr/bin/env node
/** Command-line entry: export-text and export-images subcommands. */

import { readFileSync } from "node:fs";

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { getBackbone } from "./backbone.js";
import { exportImages } from "./exportImages.js";
import { exportText } from "./exportText.js";
import { parseTaxonomy } from "./taxonomy.js";

function loadTaxonomy(path: string) {
  return parseTaxonomy(readFileSync(path, "utf-8"));
}

function run(fn: () => void): void {
  try {
    fn();
  } catch (err) {
    const e = err as Error;
    console.error(`error (${e.name ?? "Error"}): ${e.message}`);
    process.exit(1);
  }
}

await yargs(hideBin(process.argv))
  .scriptName("hgclassify-export")
  .command(
    "export-text",
    "Write per-class text embeddings (HGEB kind 0, level-major order)",
    (y) =>
      y
        .option("taxonomy", { type: "string", demandOption: true, describe: "Taxonomy file" })
        .option("out", { type: "string", demandOption: true, describe: "Output .hgeb path" })
        .option("template", {
          type: "string",
          array: true,
          default: ["a photo of a [CLASS]."],
          describe: "Prompt template (one for all levels, or one per level)",
        })
        .option("ensemble", {
          type: "string",
          array: true,
          describe: "Ensemble templates; rows become the mean over them",
        })
        .option("backbone", { type: "string", default: "hash:512", describe: "Backbone identifier" }),
    (argv) =>
      run(() => {
        const result = exportText(
          {
            taxonomy: loadTaxonomy(argv.taxonomy),
            templates: argv.template,
            ensemble: argv.ensemble,
            backbone: getBackbone(argv.backbone),
          },
          argv.out,
        );
        console.log(`wrote ${result.count} x ${result.dim} text embeddings -> ${argv.out}`);
      }),
  )
  .command(
    "export-images",
    "Write per-image patch features (HGEB kind 1 records)",
    (y) =>
      y
        .option("taxonomy", { type: "string", demandOption: true, describe: "Taxonomy file" })
        .option("dataset", {
          type: "string",
          demandOption: true,
          describe: "Dataset root containing labels.tsv",
        })
        .option("out", { type: "string", demandOption: true, describe: "Output .hgeb path" })
        .option("backbone", { type: "string", default: "hash:512", describe: "Backbone identifier" }),
    (argv) =>
      run(() => {
        const result = exportImages(
          {
            taxonomy: loadTaxonomy(argv.taxonomy),
            datasetRoot: argv.dataset,
            backbone: getBackbone(argv.backbone),
          },
          argv.out,
        );
        console.log(
          `wrote ${result.count} records (${result.patches} x ${result.dim} patches) -> ${argv.out}`,
        );
      }),
  )
  .demandCommand(1)
  .strict()
  .fail((msg, err) => {
    console.error(err ? `error (${err.name}): ${err.message}` : msg);
    process.exit(1);
  })
  .parseAsync();
