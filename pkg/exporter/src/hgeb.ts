/**
 * HGEB binary format (little-endian): magic `HGEB`, u32 version=1, u32 kind,
 * u32 count, u32 dim. Kind 0: count x dim float32 rows. Kind 1: `count`
 * records of {u32 M, h x u32 label path, M x dim float32 rows}. Values are
 * written raw; the consumer normalizes at use sites.
 */

export const MAGIC = "HGEB";
export const VERSION = 1;
export const KIND_TEXT = 0;
export const KIND_IMAGES = 1;

export interface ImageRecordOut {
  /** M patch-feature rows, each of backbone width. */
  patches: Float32Array[];
  /** Per-level within-level class indices, coarsest first. */
  labelPath: number[];
}

function header(kind: number, count: number, dim: number): Buffer {
  const buf = Buffer.alloc(20);
  buf.write(MAGIC, 0, "ascii");
  buf.writeUInt32LE(VERSION, 4);
  buf.writeUInt32LE(kind, 8);
  buf.writeUInt32LE(count, 12);
  buf.writeUInt32LE(dim, 16);
  return buf;
}

function rowBytes(row: Float32Array): Buffer {
  const buf = Buffer.alloc(row.length * 4);
  for (let i = 0; i < row.length; i++) buf.writeFloatLE(row[i], i * 4);
  return buf;
}

export function encodeTextTable(rows: Float32Array[]): Buffer {
  if (rows.length === 0) throw new Error("cannot encode an empty table");
  const dim = rows[0].length;
  const parts = [header(KIND_TEXT, rows.length, dim)];
  for (const row of rows) {
    if (row.length !== dim) throw new Error("ragged rows in text table");
    parts.push(rowBytes(row));
  }
  return Buffer.concat(parts);
}

export function encodeImageRecords(records: ImageRecordOut[], levels: number): Buffer {
  if (records.length === 0) throw new Error("cannot encode an empty record stream");
  const dim = records[0].patches[0].length;
  const parts = [header(KIND_IMAGES, records.length, dim)];
  for (const rec of records) {
    if (rec.labelPath.length !== levels) throw new Error("label path depth mismatch");
    const head = Buffer.alloc(4 + 4 * levels);
    head.writeUInt32LE(rec.patches.length, 0);
    rec.labelPath.forEach((idx, i) => head.writeUInt32LE(idx, 4 + 4 * i));
    parts.push(head);
    for (const patch of rec.patches) {
      if (patch.length !== dim) throw new Error("ragged patch rows");
      parts.push(rowBytes(patch));
    }
  }
  return Buffer.concat(parts);
}

/** Reader used by the exporter's own tests. */
export function decodeTextTable(data: Buffer): { dim: number; rows: Float32Array[] } {
  if (data.toString("ascii", 0, 4) !== MAGIC) throw new Error("bad magic");
  if (data.readUInt32LE(4) !== VERSION || data.readUInt32LE(8) !== KIND_TEXT) {
    throw new Error("not a version-1 text table");
  }
  const count = data.readUInt32LE(12);
  const dim = data.readUInt32LE(16);
  if (data.length !== 20 + count * dim * 4) throw new Error("payload length mismatch");
  const rows: Float32Array[] = [];
  for (let r = 0; r < count; r++) {
    const row = new Float32Array(dim);
    for (let c = 0; c < dim; c++) row[c] = data.readFloatLE(20 + (r * dim + c) * 4);
    rows.push(row);
  }
  return { dim, rows };
}
