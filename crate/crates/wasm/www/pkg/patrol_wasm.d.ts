/* tslint:disable */
/* eslint-disable */

/**
 * Probability of the balanced memoryless fork.
 */
export function balanced_probability(): number;

/**
 * Runs synthesis on the fork with two memory elements at the hub and
 * returns the trace CSV.
 */
export function fork_trace(steps: number, seed: bigint, eps: number, beta: number, lr: number): string;

/**
 * Value of the memoryless fork strategy that heads to `t1` with probability
 * `p`, and the worst damage of each target, as JSON.
 */
export function fork_value(p: number): string;

/**
 * Generates a graph (`"grid"` with `size` vertices, or `"airport"` with
 * comma separated gate counts in `gates`), synthesizes for `steps` steps
 * and summarizes the outcome as JSON.
 */
export function synthesize_generated(kind: string, size: number, gates: string, seed: bigint, steps: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly balanced_probability: () => number;
    readonly fork_trace: (a: number, b: bigint, c: number, d: number, e: number) => [number, number, number, number];
    readonly fork_value: (a: number) => [number, number, number, number];
    readonly synthesize_generated: (a: number, b: number, c: number, d: number, e: number, f: bigint, g: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
