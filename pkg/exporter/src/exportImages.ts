/**
 * Per-image patch features streamed as HGEB kind-1 records.
 *
 * The dataset root must hold a `labels.tsv` manifest: one line per image,
 * `<relative-path>\t<level-1 name>\t...\t<level-h name>`. Every image needs
 * a class name for every level; names resolve to within-level indices via
 * the taxonomy.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { Backbone } from "./backbone.js";
import { LabelError } from "./errors.js";
import { ImageRecordOut, encodeImageRecords } from "./hgeb.js";
import { Taxonomy, levelIndex } from "./taxonomy.js";

export const MANIFEST = "labels.tsv";

export interface ImageExportSpec {
  taxonomy: Taxonomy;
  datasetRoot: string;
  backbone: Backbone;
}

export interface ManifestEntry {
  path: string;
  labelPath: number[];
}

export function readManifest(spec: ImageExportSpec): ManifestEntry[] {
  const lookup = levelIndex(spec.taxonomy);
  const text = readFileSync(join(spec.datasetRoot, MANIFEST), "utf-8");
  const entries: ManifestEntry[] = [];
  text.split(/\r?\n/).forEach((raw, idx) => {
    const line = raw.trim();
    if (!line || line.startsWith("#")) return;
    const parts = raw.split("\t").map((p) => p.trim());
    if (parts.length !== 1 + spec.taxonomy.levels) {
      throw new LabelError(
        `labels.tsv line ${idx + 1}: image needs a class for each of ` +
          `${spec.taxonomy.levels} levels, got ${parts.length - 1} labels`,
      );
    }
    const labelPath = parts.slice(1).map((name, lv) => {
      const found = lookup[lv].get(name);
      if (found === undefined) {
        throw new LabelError(`labels.tsv line ${idx + 1}: unknown level-${lv + 1} class ${name}`);
      }
      return found;
    });
    entries.push({ path: parts[0], labelPath });
  });
  if (entries.length === 0) throw new LabelError("labels.tsv lists no images");
  return entries;
}

export function exportImages(
  spec: ImageExportSpec,
  outPath: string,
): { count: number; patches: number; dim: number } {
  const entries = readManifest(spec);
  const records: ImageRecordOut[] = entries.map((entry) => ({
    patches: spec.backbone.encodeImagePatches(readFileSync(join(spec.datasetRoot, entry.path))),
    labelPath: entry.labelPath,
  }));
  writeFileSync(outPath, encodeImageRecords(records, spec.taxonomy.levels));
  return { count: records.length, patches: spec.backbone.patchCount, dim: spec.backbone.dim };
}
