// Process plumbing for the native engine. The bindings contain no
// numerical logic at all: every computation is delegated to the
// `subsetdic` executable and results come back through its file formats.

import { spawn } from "node:child_process";

/** Raised when the engine exits nonzero; carries its diagnostic text. */
export class EngineError extends Error {
  constructor(
    message: string,
    readonly exitCode: number,
    readonly stderr: string,
  ) {
    super(message);
    this.name = "EngineError";
  }
}

/**
 * Path of the engine executable. Defaults to `subsetdic` on PATH;
 * override with the SUBSETDIC_BIN environment variable.
 */
export function engineExecutable(): string {
  return process.env.SUBSETDIC_BIN ?? "subsetdic";
}

/**
 * Run one engine subcommand to completion.
 *
 * The child's stderr is collected and surfaced in the EngineError message
 * verbatim, so a failed run reads exactly like the CLI would on a
 * terminal (exit 2: configuration or input problems; exit 3: the
 * correlation itself failed). Spawning asynchronously keeps the event
 * loop free while the engine computes.
 */
export function runEngine(args: string[]): Promise<void> {
  const exe = engineExecutable();
  return new Promise((resolve, reject) => {
    const child = spawn(exe, args, { stdio: ["ignore", "ignore", "pipe"] });
    let stderr = "";
    child.stderr.on("data", (chunk: Buffer) => {
      stderr += chunk.toString("utf-8");
    });
    child.on("error", (err) => {
      reject(
        new EngineError(
          `cannot run ${exe}: ${err.message} (is the engine installed ` +
            `and on PATH, or SUBSETDIC_BIN set?)`,
          -1,
          "",
        ),
      );
    });
    child.on("close", (code) => {
      if (code === 0) {
        resolve();
      } else {
        const text = stderr.trim();
        reject(
          new EngineError(
            text.length > 0 ? text : `${exe} exited with code ${code}`,
            code ?? -1,
            stderr,
          ),
        );
      }
    });
  });
}
