import { describe, expect, it } from "vitest";

import { decodeTextTable, encodeImageRecords, encodeTextTable } from "../src/hgeb.js";

describe("hgeb encoding", () => {
  it("text tables round-trip bit-exactly", () => {
    const rows = [new Float32Array([1.5, -2.25, 0]), new Float32Array([3.125, 0.5, -1])];
    const decoded = decodeTextTable(encodeTextTable(rows));
    expect(decoded.dim).toBe(3);
    expect(decoded.rows.length).toBe(2);
    rows.forEach((row, i) => {
      expect(Buffer.from(decoded.rows[i].buffer)).toEqual(Buffer.from(row.buffer));
    });
  });

  it("writes the documented header layout", () => {
    const buf = encodeTextTable([new Float32Array([1, 2])]);
    expect(buf.toString("ascii", 0, 4)).toBe("HGEB");
    expect(buf.readUInt32LE(4)).toBe(1); // version
    expect(buf.readUInt32LE(8)).toBe(0); // kind 0 = text table
    expect(buf.readUInt32LE(12)).toBe(1); // count
    expect(buf.readUInt32LE(16)).toBe(2); // dim
    expect(buf.length).toBe(20 + 2 * 4);
  });

  it("lays out image records as M, label path, then rows", () => {
    const record = {
      patches: [new Float32Array([1, 2]), new Float32Array([3, 4])],
      labelPath: [1, 3],
    };
    const buf = encodeImageRecords([record], 2);
    expect(buf.readUInt32LE(8)).toBe(1); // kind 1 = image records
    expect(buf.readUInt32LE(20)).toBe(2); // M
    expect(buf.readUInt32LE(24)).toBe(1); // level-1 label
    expect(buf.readUInt32LE(28)).toBe(3); // level-2 label
    expect(buf.readFloatLE(32)).toBe(1);
    expect(buf.length).toBe(20 + 4 + 8 + 4 * 4);
  });

  it("rejects depth mismatches", () => {
    const record = { patches: [new Float32Array([1])], labelPath: [0] };
    expect(() => encodeImageRecords([record], 2)).toThrow(/depth/);
  });
});
