// Readers for the engine's result file formats, as documented in
// docs/formats.md: a '#'-commented metadata header ahead of delimited
// columns, and the bit-exact binary layout sharing the same header.

import { readFileSync } from "node:fs";

export type Grid2d = number[][];

export interface DicFileHeader {
  format_version: number;
  subset_size: number;
  subset_step: number;
  cost: string;
  shape: string;
  image_width: number;
  image_height: number;
  grid_cols: number;
  grid_rows: number;
  grid_origin_x: number;
  grid_origin_y: number;
  image_label: string;
}

export interface DicFile {
  header: DicFileHeader;
  ss_x: number[];
  ss_y: number[];
  u_x: Grid2d;
  u_y: Grid2d;
  zncc: Grid2d;
  iterations: Grid2d;
  status: Grid2d;
}

const MAGIC = Buffer.from("DICF2D\0\0", "binary");
const COST_FROM_CODE = ["ssd", "nssd", "znssd"];
const SHAPE_FROM_CODE = ["rigid", "affine", "quadratic"];

const DIC_COLUMNS = ["x", "y", "u_x", "u_y", "zncc", "iterations", "status"];
const STRAIN_COLUMNS = [
  "x", "y", "Fxx", "Fxy", "Fyx", "Fyy", "exx", "eyy", "exy", "valid",
];

/** Split the leading `# key: value` block from the data lines. */
export function splitCommentBlock(
  lines: string[],
): [Record<string, string>, number] {
  const meta: Record<string, string> = {};
  let bodyAt = lines.length;
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i];
    if (!line.startsWith("#")) {
      bodyAt = i;
      break;
    }
    const sep = line.indexOf(":");
    if (sep > 0) {
      meta[line.slice(1, sep).trim()] = line.slice(sep + 1).trim();
    }
  }
  return [meta, bodyAt];
}

function metaInt(
  meta: Record<string, string>,
  key: string,
  path: string,
): number {
  const raw = meta[key];
  if (raw === undefined) throw new Error(`${path}: header lacks ${key}`);
  const value = Number(raw);
  if (!Number.isInteger(value)) {
    throw new Error(`${path}: header field ${key} is not an integer: ${raw}`);
  }
  return value;
}

function metaStr(
  meta: Record<string, string>,
  key: string,
  path: string,
): string {
  const raw = meta[key];
  if (raw === undefined) throw new Error(`${path}: header lacks ${key}`);
  return raw;
}

function parseRows(
  lines: string[],
  bodyAt: number,
  columns: string[],
  nExpected: number,
  delimiter: string,
  path: string,
): number[][] {
  if (bodyAt >= lines.length) {
    throw new Error(`${path}: no column header line`);
  }
  const head = lines[bodyAt].split(delimiter);
  if (head.length !== columns.length || head.some((h, i) => h !== columns[i])) {
    throw new Error(
      `${path}:${bodyAt + 1}: column header is not ${columns.join(delimiter)}`,
    );
  }
  const rows: number[][] = [];
  for (let i = bodyAt + 1; i < lines.length; i++) {
    const line = lines[i];
    if (line.trim().length === 0) continue;
    const parts = line.split(delimiter);
    if (parts.length !== columns.length) {
      throw new Error(
        `${path}:${i + 1}: expected ${columns.length} fields, got ${parts.length}`,
      );
    }
    rows.push(parts.map(Number));
  }
  if (rows.length !== nExpected) {
    throw new Error(
      `${path}: expected ${nExpected} data rows, got ${rows.length}`,
    );
  }
  return rows;
}

function column(rows: number[][], j: number, nRows: number, nCols: number): Grid2d {
  const out: Grid2d = [];
  for (let r = 0; r < nRows; r++) {
    const line: number[] = new Array<number>(nCols);
    for (let c = 0; c < nCols; c++) line[c] = rows[r * nCols + c][j];
    out.push(line);
  }
  return out;
}

function lattice(step: number, origin: number, count: number): number[] {
  return Array.from({ length: count }, (_, i) => origin + step * i);
}

export function readDicCsv(path: string, delimiter = ","): DicFile {
  const lines = readFileSync(path, "utf-8").split(/\r?\n/);
  const [meta, bodyAt] = splitCommentBlock(lines);
  const header: DicFileHeader = {
    format_version: metaInt(meta, "format_version", path),
    subset_size: metaInt(meta, "subset_size", path),
    subset_step: metaInt(meta, "subset_step", path),
    cost: metaStr(meta, "cost", path),
    shape: metaStr(meta, "shape", path),
    image_width: metaInt(meta, "image_width", path),
    image_height: metaInt(meta, "image_height", path),
    grid_cols: metaInt(meta, "grid_cols", path),
    grid_rows: metaInt(meta, "grid_rows", path),
    grid_origin_x: metaInt(meta, "grid_origin_x", path),
    grid_origin_y: metaInt(meta, "grid_origin_y", path),
    image_label: metaStr(meta, "image_label", path),
  };
  const { grid_rows: nr, grid_cols: nc } = header;
  const rows = parseRows(lines, bodyAt, DIC_COLUMNS, nr * nc, delimiter, path);
  return {
    header,
    ss_x: lattice(header.subset_step, header.grid_origin_x, nc),
    ss_y: lattice(header.subset_step, header.grid_origin_y, nr),
    u_x: column(rows, 2, nr, nc),
    u_y: column(rows, 3, nr, nc),
    zncc: column(rows, 4, nr, nc),
    iterations: column(rows, 5, nr, nc),
    status: column(rows, 6, nr, nc),
  };
}

function binaryGrid(
  buf: Buffer,
  at: number,
  nr: number,
  nc: number,
  read: (offset: number) => number,
  itemBytes: number,
): [Grid2d, number] {
  const out: Grid2d = [];
  for (let r = 0; r < nr; r++) {
    const line: number[] = new Array<number>(nc);
    for (let c = 0; c < nc; c++) {
      line[c] = read(at + (r * nc + c) * itemBytes);
    }
    out.push(line);
  }
  return [out, at + nr * nc * itemBytes];
}

export function readDicBinary(path: string): DicFile {
  const buf = readFileSync(path);
  if (buf.length < MAGIC.length || !buf.subarray(0, 8).equals(MAGIC)) {
    throw new Error(`${path}: leading bytes are not a correlation result file`);
  }
  // header struct: <IIIBBIIIIiiH, packed little-endian, 40 bytes
  if (buf.length < 48) throw new Error(`${path}: ran out of bytes reading header`);
  const version = buf.readUInt32LE(8);
  if (version !== 1) {
    throw new Error(`${path}: format version ${version}, this reader handles 1`);
  }
  const costCode = buf.readUInt8(20);
  const shapeCode = buf.readUInt8(21);
  if (costCode >= COST_FROM_CODE.length) {
    throw new Error(`${path}: unknown cost code ${costCode}`);
  }
  if (shapeCode >= SHAPE_FROM_CODE.length) {
    throw new Error(`${path}: unknown shape code ${shapeCode}`);
  }
  const header: DicFileHeader = {
    format_version: version,
    subset_size: buf.readUInt32LE(12),
    subset_step: buf.readUInt32LE(16),
    cost: COST_FROM_CODE[costCode],
    shape: SHAPE_FROM_CODE[shapeCode],
    image_width: buf.readUInt32LE(22),
    image_height: buf.readUInt32LE(26),
    grid_cols: buf.readUInt32LE(30),
    grid_rows: buf.readUInt32LE(34),
    grid_origin_x: buf.readInt32LE(38),
    grid_origin_y: buf.readInt32LE(42),
    image_label: "",
  };
  const labelLen = buf.readUInt16LE(46);
  let at = 48;
  header.image_label = buf.subarray(at, at + labelLen).toString("utf-8");
  at += labelLen;
  const { grid_rows: nr, grid_cols: nc } = header;
  const need = at + nr * nc * (3 * 8 + 2 * 4);
  if (buf.length < need) {
    throw new Error(`${path}: ran out of bytes reading arrays`);
  }
  const f64 = (offset: number) => buf.readDoubleLE(offset);
  const i32 = (offset: number) => buf.readInt32LE(offset);
  let u_x: Grid2d, u_y: Grid2d, zncc: Grid2d, iterations: Grid2d, status: Grid2d;
  [u_x, at] = binaryGrid(buf, at, nr, nc, f64, 8);
  [u_y, at] = binaryGrid(buf, at, nr, nc, f64, 8);
  [zncc, at] = binaryGrid(buf, at, nr, nc, f64, 8);
  [iterations, at] = binaryGrid(buf, at, nr, nc, i32, 4);
  [status, at] = binaryGrid(buf, at, nr, nc, i32, 4);
  return {
    header,
    ss_x: lattice(header.subset_step, header.grid_origin_x, nc),
    ss_y: lattice(header.subset_step, header.grid_origin_y, nr),
    u_x,
    u_y,
    zncc,
    iterations,
    status,
  };
}

export interface StrainFileHeader {
  format_version: number;
  window_points: number;
  basis: string;
  formulation: string;
  vsg: number;
  grid_cols: number;
  grid_rows: number;
  image_label: string;
}

export interface StrainFile {
  header: StrainFileHeader;
  window_x: number[];
  window_y: number[];
  F_xx: Grid2d;
  F_xy: Grid2d;
  F_yx: Grid2d;
  F_yy: Grid2d;
  eps_xx: Grid2d;
  eps_yy: Grid2d;
  eps_xy: Grid2d;
  valid: boolean[][];
}

export function readStrainCsv(path: string, delimiter = ","): StrainFile {
  const lines = readFileSync(path, "utf-8").split(/\r?\n/);
  const [meta, bodyAt] = splitCommentBlock(lines);
  const vsgRaw = metaStr(meta, "vsg", path);
  const vsg = Number(vsgRaw);
  if (!Number.isFinite(vsg)) {
    throw new Error(`${path}: header field vsg is not a number: ${vsgRaw}`);
  }
  const header: StrainFileHeader = {
    format_version: metaInt(meta, "format_version", path),
    window_points: metaInt(meta, "window_points", path),
    basis: metaStr(meta, "basis", path),
    formulation: metaStr(meta, "formulation", path),
    vsg,
    grid_cols: metaInt(meta, "grid_cols", path),
    grid_rows: metaInt(meta, "grid_rows", path),
    image_label: metaStr(meta, "image_label", path),
  };
  const { grid_rows: nr, grid_cols: nc } = header;
  const rows = parseRows(
    lines, bodyAt, STRAIN_COLUMNS, nr * nc, delimiter, path,
  );
  // the strain header declares no lattice origin; read centers from rows
  const window_x: number[] = new Array<number>(nc);
  const window_y: number[] = new Array<number>(nr);
  for (let c = 0; c < nc; c++) window_x[c] = rows[c][0];
  for (let r = 0; r < nr; r++) window_y[r] = rows[r * nc][1];
  return {
    header,
    window_x,
    window_y,
    F_xx: column(rows, 2, nr, nc),
    F_xy: column(rows, 3, nr, nc),
    F_yx: column(rows, 4, nr, nc),
    F_yy: column(rows, 5, nr, nc),
    eps_xx: column(rows, 6, nr, nc),
    eps_yy: column(rows, 7, nr, nc),
    eps_xy: column(rows, 8, nr, nc),
    valid: column(rows, 9, nr, nc).map((line) => line.map((v) => v !== 0)),
  };
}
