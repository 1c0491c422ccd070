/**
 * Per-class text embeddings in the consumer's level-major node order.
 * Each class name is substituted into its level's prompt template; with an
 * ensemble, the written row is the mean over all ensemble templates. Rows
 * are raw backbone outputs (normalization is the consumer's job).
 */

import { writeFileSync } from "node:fs";

import { Backbone } from "./backbone.js";
import { TemplateError } from "./errors.js";
import { encodeTextTable } from "./hgeb.js";
import { Taxonomy } from "./taxonomy.js";

export const CLASS_TOKEN = "[CLASS]";

export interface TextExportSpec {
  taxonomy: Taxonomy;
  /** One template for every level, or one per level (coarsest first). */
  templates: string[];
  /** Optional ensemble applied to every level instead of its single template. */
  ensemble?: string[];
  backbone: Backbone;
}

export function validateTemplate(template: string): void {
  const matches = template.split(CLASS_TOKEN).length - 1;
  if (matches !== 1) {
    throw new TemplateError(
      `template must contain exactly one ${CLASS_TOKEN} placeholder, got ${matches}: ${template}`,
    );
  }
}

function templatesForLevel(spec: TextExportSpec, level: number): string[] {
  if (spec.ensemble && spec.ensemble.length > 0) return spec.ensemble;
  if (spec.templates.length === 1) return [spec.templates[0]];
  if (spec.templates.length !== spec.taxonomy.levels) {
    throw new TemplateError(
      `expected 1 or ${spec.taxonomy.levels} templates, got ${spec.templates.length}`,
    );
  }
  return [spec.templates[level - 1]];
}

function meanRows(rows: Float32Array[]): Float32Array {
  if (rows.length === 1) return rows[0];
  const out = new Float64Array(rows[0].length);
  for (const row of rows) for (let i = 0; i < row.length; i++) out[i] += row[i];
  const mean = new Float32Array(rows[0].length);
  for (let i = 0; i < mean.length; i++) mean[i] = out[i] / rows.length;
  return mean;
}

export function textEmbeddings(spec: TextExportSpec): Float32Array[] {
  spec.templates.forEach(validateTemplate);
  spec.ensemble?.forEach(validateTemplate);
  const rows: Float32Array[] = [];
  spec.taxonomy.names.forEach((levelNames, levelIdx) => {
    const templates = templatesForLevel(spec, levelIdx + 1);
    for (const name of levelNames) {
      const variants = templates.map((t) =>
        spec.backbone.encodeText(t.replaceAll(CLASS_TOKEN, name)),
      );
      rows.push(meanRows(variants));
    }
  });
  return rows;
}

export function exportText(spec: TextExportSpec, outPath: string): { count: number; dim: number } {
  const rows = textEmbeddings(spec);
  writeFileSync(outPath, encodeTextTable(rows));
  return { count: rows.length, dim: spec.backbone.dim };
}
