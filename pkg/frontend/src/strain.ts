// Strain: delegate the windowed fit to the engine CLI, import strain
// files back as arrays indexed [image, y, x].

import { globSync } from "glob";

import { runEngine } from "./engine.js";
import { Grid2d, readStrainCsv, StrainFile, StrainFileHeader } from "./formats.js";

export interface StrainCalculate2dOptions {
  /** Correlation result-file glob, e.g. "./dic_results_*". */
  data: string;
  input_binary?: boolean;
  input_delimiter?: string;
  /** Window side length in displacement points (odd), e.g. 5 for 5x5. */
  window_size?: number;
  basis?: "bilinear" | "biquadratic";
  formulation?:
    | "green_lagrange"
    | "hencky"
    | "euler_almansi"
    | "biot_right"
    | "biot_left";
  delimiter?: string;
  output_basepath?: string;
}

/**
 * Compute strain fields from written correlation results, one strain
 * file per input file. Pure delegation to the engine's `strain`
 * subcommand; outputs are identical to an equivalent CLI run.
 */
export async function calculate_2d(
  options: StrainCalculate2dOptions,
): Promise<void> {
  const args = ["strain", "--data", options.data];
  if (options.input_binary !== undefined) {
    args.push(options.input_binary ? "--input-binary" : "--no-input-binary");
  }
  if (options.input_delimiter !== undefined) {
    args.push("--input-delimiter", options.input_delimiter);
  }
  if (options.window_size !== undefined) {
    args.push("--window-points", String(options.window_size));
  }
  if (options.basis !== undefined) args.push("--basis", options.basis);
  if (options.formulation !== undefined) {
    args.push("--formulation", options.formulation);
  }
  if (options.delimiter !== undefined) {
    args.push("--delimiter", options.delimiter);
  }
  if (options.output_basepath !== undefined) {
    args.push("--out", options.output_basepath);
  }
  await runEngine(args);
}

export interface StrainImport2dOptions {
  /** Strain-file glob, e.g. "strain_*". */
  data: string;
  delimiter?: string;
}

/** Strain fields stacked over images, tensor arrays [image, y, x]. */
export interface StrainData {
  labels: string[];
  /** Strain window center x coordinates (shared across images). */
  window_x: number[];
  window_y: number[];
  F_xx: Grid2d[];
  F_xy: Grid2d[];
  F_yx: Grid2d[];
  F_yy: Grid2d[];
  eps_xx: Grid2d[];
  eps_yy: Grid2d[];
  eps_xy: Grid2d[];
  /** valid[image][y][x]: window had enough points for a full-rank fit. */
  valid: boolean[][][];
  metadata: StrainFileHeader[];
}

/**
 * Load every strain file matching a glob, sorted by filename, into
 * arrays indexed [image, y, x]. All files must share grid dimensions.
 */
export function import_2d(options: StrainImport2dOptions): StrainData {
  const paths = globSync(options.data).sort();
  if (paths.length === 0) {
    throw new Error(`no files match '${options.data}'`);
  }
  const files: StrainFile[] = paths.map((p) =>
    readStrainCsv(p, options.delimiter ?? ","),
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
    window_x: files[0].window_x,
    window_y: files[0].window_y,
    F_xx: files.map((f) => f.F_xx),
    F_xy: files.map((f) => f.F_xy),
    F_yx: files.map((f) => f.F_yx),
    F_yy: files.map((f) => f.F_yy),
    eps_xx: files.map((f) => f.eps_xx),
    eps_yy: files.map((f) => f.eps_yy),
    eps_xy: files.map((f) => f.eps_xy),
    valid: files.map((f) => f.valid),
    metadata: files.map((f) => f.header),
  };
}
