/**
 * Taxonomy file parsing, mirroring the consumer's format and ordering rules:
 * `#levels <h>` header, one `<level>\t<name>\t<parent|->` line per node,
 * `#`-prefixed comments. Node order downstream is level-major with file
 * order preserved inside a level.
 */

import { ParseError } from "./errors.js";

export interface Taxonomy {
  levels: number;
  /** names[i] lists level i+1 class names in file order */
  names: string[][];
  /** parentOf[i][j]: within-level parent index (at level i+1) of node j at level i+2 */
  parentOf: number[][];
}

export function parseTaxonomy(text: string): Taxonomy {
  let levels: number | null = null;
  const rows: Array<{ level: number; name: string; parent: string }> = [];

  text.split(/\r?\n/).forEach((raw, idx) => {
    const lineno = idx + 1;
    const line = raw.trim();
    if (!line) return;
    if (line.startsWith("#")) {
      const fields = line.slice(1).trim().split(/\s+/);
      if (fields[0] === "levels") {
        const value = Number(fields[1]);
        if (!Number.isInteger(value) || value < 1) {
          throw new ParseError(`line ${lineno}: malformed #levels header`);
        }
        levels = value;
      }
      return;
    }
    if (levels === null) throw new ParseError(`line ${lineno}: node line before #levels header`);
    const parts = raw.split("\t");
    if (parts.length !== 3) {
      throw new ParseError(`line ${lineno}: expected 3 tab-separated fields, got ${parts.length}`);
    }
    const level = Number(parts[0]);
    if (!Number.isInteger(level) || level < 1 || level > levels) {
      throw new ParseError(`line ${lineno}: level ${parts[0]} outside 1..${levels}`);
    }
    rows.push({ level, name: parts[1].trim(), parent: parts[2].trim() });
  });

  if (levels === null) throw new ParseError("missing #levels header");
  const names: string[][] = Array.from({ length: levels }, () => []);
  const parents: string[][] = Array.from({ length: levels }, () => []);
  for (const row of rows) {
    names[row.level - 1].push(row.name);
    parents[row.level - 1].push(row.parent);
  }
  names.forEach((level, i) => {
    if (level.length === 0) throw new ParseError(`level ${i + 1} has no classes`);
  });

  const parentOf: number[][] = [];
  for (let lv = 1; lv < levels; lv++) {
    const lookup = new Map(names[lv - 1].map((n, j) => [n, j]));
    const links: number[] = [];
    names[lv].forEach((name, j) => {
      const parent = parents[lv][j];
      const idx = lookup.get(parent);
      if (parent === "-" || idx === undefined) {
        throw new ParseError(`class ${name} references unknown parent ${parent}`);
      }
      links.push(idx);
    });
    parentOf.push(links);
  }
  return { levels, names, parentOf };
}

/** Class names flattened in the level-major node order. */
export function levelMajorNames(t: Taxonomy): string[] {
  return t.names.flat();
}

/** Within-level index of each class name, per level. */
export function levelIndex(t: Taxonomy): Array<Map<string, number>> {
  return t.names.map((level) => new Map(level.map((n, j) => [n, j])));
}
