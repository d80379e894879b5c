// Scripting bindings for the subsetdic correlation engine. Everything
// numerical happens in the engine process; these modules only build
// argument lists and read the documented file formats back.

export * as dic from "./dic.js";
export * as strain from "./strain.js";
export { EngineError, engineExecutable } from "./engine.js";

/** Tracks the native engine package version. */
export const version = "0.1.0";
