// Minimal PGM reading and writing, enough to carry ROI masks between an
// in-memory boolean array and the mask files the engine consumes.

import { readFileSync, writeFileSync } from "node:fs";

export interface PgmImage {
  width: number;
  height: number;
  maxval: number;
  /** Row-major samples, length width*height. */
  pixels: Uint16Array;
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}

/** Read whitespace-separated ASCII integers, skipping `#` comments. */
function readTokens(buf: Buffer, count: number, pos: number): [number[], number] {
  const out: number[] = [];
  while (out.length < count) {
    while (pos < buf.length && isSpace(buf[pos])) pos++;
    if (pos < buf.length && buf[pos] === 0x23) {
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      continue;
    }
    const start = pos;
    while (pos < buf.length && !isSpace(buf[pos]) && buf[pos] !== 0x23) pos++;
    if (pos === start) throw new Error("truncated PGM header");
    const token = buf.subarray(start, pos).toString("ascii");
    const value = Number(token);
    if (!Number.isInteger(value)) throw new Error(`bad PGM token ${token}`);
    out.push(value);
  }
  return [out, pos];
}

/** Parse an 8/16-bit P2 or P5 PGM file. */
export function readPgm(path: string): PgmImage {
  const buf = readFileSync(path);
  const magic = buf.subarray(0, 2).toString("ascii");
  if (magic !== "P2" && magic !== "P5") {
    throw new Error(`${path}: not a PGM (P2/P5) file`);
  }
  const [[width, height, maxval], pos] = readTokens(buf, 3, 2);
  if (width <= 0 || height <= 0) {
    throw new Error(`${path}: bad PGM dimensions ${width}x${height}`);
  }
  if (maxval <= 0 || maxval > 65535) {
    throw new Error(`${path}: bad PGM maxval ${maxval}`);
  }
  const n = width * height;
  const pixels = new Uint16Array(n);
  if (magic === "P2") {
    const [vals] = readTokens(buf, n, pos);
    pixels.set(vals);
  } else {
    // binary data begins after exactly one whitespace byte
    let at = pos;
    if (!isSpace(buf[at])) throw new Error(`${path}: malformed P5 header`);
    at++;
    const wide = maxval > 255;
    const need = n * (wide ? 2 : 1);
    if (buf.length - at < need) {
      throw new Error(`${path}: PGM pixel data shorter than header declares`);
    }
    for (let i = 0; i < n; i++) {
      pixels[i] = wide ? buf.readUInt16BE(at + 2 * i) : buf[at + i];
    }
  }
  return { width, height, maxval, pixels };
}

/**
 * Write a boolean mask as a binary 8-bit PGM (255 inside, 0 outside),
 * the form the engine's `--roi-mask` option reads.
 */
export function writeMaskPgm(
  path: string,
  width: number,
  height: number,
  inside: (x: number, y: number) => boolean,
): void {
  const header = Buffer.from(`P5\n${width} ${height}\n255\n`, "ascii");
  const body = Buffer.alloc(width * height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      body[y * width + x] = inside(x, y) ? 255 : 0;
    }
  }
  writeFileSync(path, Buffer.concat([header, body]));
}
