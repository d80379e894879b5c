// Shared fixture plumbing: every test talks to the real engine through
// its CLI, so fixtures are built by the engine's own synth subcommand.

import { execFileSync } from "node:child_process";
import { copyFileSync, mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { engineExecutable } from "../src/engine.js";

/** Run the engine CLI synchronously; throws on nonzero exit. */
export function cli(args: string[]): void {
  execFileSync(engineExecutable(), args, { stdio: ["ignore", "pipe", "pipe"] });
}

export function makeWorkDir(prefix: string): string {
  return mkdtempSync(join(tmpdir(), prefix));
}

export interface Fixture {
  dir: string;
  ref: string;
  /** def_0000.pgm: identical copy of the reference (null test). */
  defNull: string;
  /** def_0001.pgm: the reference translated by (0.25, 0.40) px. */
  defShift: string;
  /** Glob matching both deformed images in filename order. */
  defGlob: string;
}

/**
 * One 400x300 speckle image, correlated twice: against an identical
 * copy and against a sub-pixel translated warp of itself.
 */
export function buildFixture(): Fixture {
  const dir = makeWorkDir("subsetdic-fix-");
  cli([
    "synth", "--out", dir, "--width", "400", "--height", "300",
    "--rng-seed", "3", "--field", "translation", "--shift", "0.25,0.40",
  ]);
  const ref = join(dir, "ref.pgm");
  const defNull = join(dir, "def_0000.pgm");
  const defShift = join(dir, "def_0001.pgm");
  copyFileSync(ref, defNull);
  return { dir, ref, defNull, defShift, defGlob: join(dir, "def_000*.pgm") };
}

/** The correlation settings shared by the CLI-vs-bindings comparisons. */
export const DIC_CONFIG = {
  roi_border: 20,
  seed: [200, 150] as [number, number],
  subset_size: 21,
  subset_step: 10,
  max_displacement: 2,
  threads: 1,
};

/** The same settings as CLI flags. */
export function dicCliFlags(ref: string, defGlob: string, out: string): string[] {
  return [
    "dic2d", "--ref", ref, "--def", defGlob,
    "--roi-border", String(DIC_CONFIG.roi_border),
    "--seed", `${DIC_CONFIG.seed[0]},${DIC_CONFIG.seed[1]}`,
    "--subset-size", String(DIC_CONFIG.subset_size),
    "--subset-step", String(DIC_CONFIG.subset_step),
    "--max-displacement", String(DIC_CONFIG.max_displacement),
    "--threads", String(DIC_CONFIG.threads),
    "--out", out,
  ];
}
