// 2D correlation: delegate runs to the engine CLI, import result files
// back as plain arrays indexed [image, y, x].

import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { globSync } from "glob";

import { runEngine } from "./engine.js";
import { readPgm, writeMaskPgm } from "./pgm.js";
import {
  DicFile,
  DicFileHeader,
  Grid2d,
  readDicBinary,
  readDicCsv,
} from "./formats.js";

/**
 * A region of interest backed by mask files: a boolean pixel mask plus
 * an optional seed point for the reliability-guided pass. Build one from
 * an existing mask image, or start from an all-true mask and carve it.
 */
export class RegionOfInterest {
  /** mask[y][x], true = inside the region. */
  mask: boolean[][];
  /** Seed point [x, y] handed to calculate_2d when set. */
  seed?: [number, number];

  constructor(
    readonly width: number,
    readonly height: number,
  ) {
    this.mask = Array.from({ length: height }, () =>
      new Array<boolean>(width).fill(true),
    );
  }

  /** Read a PGM mask file (nonzero = inside), the engine's convention. */
  static fromMaskFile(path: string): RegionOfInterest {
    const img = readPgm(path);
    const roi = new RegionOfInterest(img.width, img.height);
    for (let y = 0; y < img.height; y++) {
      for (let x = 0; x < img.width; x++) {
        roi.mask[y][x] = img.pixels[y * img.width + x] !== 0;
      }
    }
    return roi;
  }

  /** Exclude a border of the given width on all four sides. */
  excludeBorder(px: number): this {
    for (let y = 0; y < this.height; y++) {
      for (let x = 0; x < this.width; x++) {
        if (
          x < px || y < px || x >= this.width - px || y >= this.height - px
        ) {
          this.mask[y][x] = false;
        }
      }
    }
    return this;
  }

  /** Set a rectangle (x, y, w, h) to inside or outside. */
  setRect(x: number, y: number, w: number, h: number, inside: boolean): this {
    const x1 = Math.min(this.width, x + w);
    const y1 = Math.min(this.height, y + h);
    for (let yy = Math.max(0, y); yy < y1; yy++) {
      for (let xx = Math.max(0, x); xx < x1; xx++) {
        this.mask[yy][xx] = inside;
      }
    }
    return this;
  }

  /** Write the mask as an 8-bit PGM the engine's --roi-mask reads. */
  writeMaskFile(path: string): void {
    writeMaskPgm(path, this.width, this.height, (x, y) => this.mask[y][x]);
  }
}

export interface Calculate2dOptions {
  /** Reference image path (PGM or grayscale TIFF). */
  reference: string;
  /** Deformed image path or glob, e.g. "./def_*.tiff". */
  deformed: string;
  /**
   * Region of interest: a RegionOfInterest, an in-memory boolean
   * mask[y][x], or a path to a mask image file.
   */
  roi_mask?: RegionOfInterest | boolean[][] | string;
  /** Border exclusion in px, when no mask is given. */
  roi_border?: number;
  /** Seed [x, y]; falls back to roi_mask.seed for a RegionOfInterest. */
  seed?: [number, number];
  subset_size?: number;
  subset_step?: number;
  max_displacement?: number;
  cost?: "ssd" | "nssd" | "znssd";
  shape?: "rigid" | "affine" | "quadratic";
  method?: "multiwindow" | "multiwindow_rg";
  max_iterations?: number;
  update_precision?: number;
  zncc_threshold?: number;
  threads?: number;
  /** Write the binary format instead of CSV. */
  binary?: boolean;
  delimiter?: string;
  output_basepath?: string;
}

function pushFlag(
  args: string[],
  flag: string,
  value: number | string | undefined,
): void {
  if (value !== undefined) args.push(flag, String(value));
}

/**
 * Correlate a reference image against deformed images, writing one
 * result file per image. Pure delegation: the argument list maps one to
 * one onto the engine's `dic2d` subcommand, so outputs are identical to
 * an equivalent CLI run.
 */
export async function calculate_2d(options: Calculate2dOptions): Promise<void> {
  const args = ["dic2d", "--ref", options.reference, "--def", options.deformed];

  let seed = options.seed;
  let tmp: string | undefined;
  try {
    const roi = options.roi_mask;
    if (typeof roi === "string") {
      args.push("--roi-mask", roi);
    } else if (roi !== undefined) {
      const region = Array.isArray(roi)
        ? maskToRegion(roi)
        : roi;
      if (seed === undefined) seed = region.seed;
      tmp = mkdtempSync(join(tmpdir(), "subsetdic-roi-"));
      const maskPath = join(tmp, "roi_mask.pgm");
      region.writeMaskFile(maskPath);
      args.push("--roi-mask", maskPath);
    } else if (options.roi_border !== undefined) {
      args.push("--roi-border", String(options.roi_border));
    }
    if (seed !== undefined) args.push("--seed", `${seed[0]},${seed[1]}`);

    pushFlag(args, "--subset-size", options.subset_size);
    pushFlag(args, "--subset-step", options.subset_step);
    pushFlag(args, "--max-displacement", options.max_displacement);
    pushFlag(args, "--cost", options.cost);
    pushFlag(args, "--shape", options.shape);
    pushFlag(args, "--method", options.method);
    pushFlag(args, "--max-iterations", options.max_iterations);
    pushFlag(args, "--update-precision", options.update_precision);
    pushFlag(args, "--zncc-threshold", options.zncc_threshold);
    pushFlag(args, "--threads", options.threads);
    pushFlag(args, "--delimiter", options.delimiter);
    pushFlag(args, "--out", options.output_basepath);
    if (options.binary !== undefined) {
      args.push(options.binary ? "--binary" : "--no-binary");
    }
    await runEngine(args);
  } finally {
    if (tmp !== undefined) rmSync(tmp, { recursive: true, force: true });
  }
}

function maskToRegion(mask: boolean[][]): RegionOfInterest {
  const height = mask.length;
  const width = height > 0 ? mask[0].length : 0;
  if (width === 0) throw new Error("roi_mask array is empty");
  if (mask.some((row) => row.length !== width)) {
    throw new Error("roi_mask rows have inconsistent lengths");
  }
  const region = new RegionOfInterest(width, height);
  region.mask = mask;
  return region;
}

export interface Import2dOptions {
  /** Result-file glob, e.g. "./dic_results_*". */
  data: string;
  binary?: boolean;
  delimiter?: string;
}

/** Correlation results stacked over images, all arrays [image, y, x]. */
export interface DicData {
  /** Source image label per result file, in filename order. */
  labels: string[];
  /** Subset center x coordinates (shared across images). */
  ss_x: number[];
  /** Subset center y coordinates. */
  ss_y: number[];
  u_x: Grid2d[];
  u_y: Grid2d[];
  zncc: Grid2d[];
  iterations: Grid2d[];
  status: Grid2d[];
  /** Per-file metadata, same order as labels. */
  metadata: DicFileHeader[];
}

/**
 * Load every result file matching a glob, sorted by filename, into
 * arrays indexed [image, y, x]. All files must share grid dimensions.
 */
export function import_2d(options: Import2dOptions): DicData {
  const paths = globSync(options.data).sort();
  if (paths.length === 0) {
    throw new Error(`no files match '${options.data}'`);
  }
  const files: DicFile[] = paths.map((p) =>
    options.binary ? readDicBinary(p) : readDicCsv(p, options.delimiter ?? ","),
  );
  const first = files[0].header;
  for (let i = 1; i < files.length; i++) {
    const h = files[i].header;
    if (h.grid_rows !== first.grid_rows || h.grid_cols !== first.grid_cols) {
      throw new Error(
        `${paths[i]}: grid ${h.grid_rows}x${h.grid_cols} does not match ` +
          `${paths[0]} (${first.grid_rows}x${first.grid_cols})`,
      );
    }
  }
  return {
    labels: files.map((f) => f.header.image_label),
    ss_x: files[0].ss_x,
    ss_y: files[0].ss_y,
    u_x: files.map((f) => f.u_x),
    u_y: files.map((f) => f.u_y),
    zncc: files.map((f) => f.zncc),
    iterations: files.map((f) => f.iterations),
    status: files.map((f) => f.status),
    metadata: files.map((f) => f.header),
  };
}
