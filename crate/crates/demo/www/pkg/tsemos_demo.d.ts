/* tslint:disable */
/* eslint-disable */

/**
 * `miscalibrated_pit` as `[count0, ..., count_{bins-1}, variance]`.
 */
export function pitHistogram(bias: number, spread: number, n: number, bins: number, seed: number): Float64Array;

/**
 * Flattened `score_profile`: `[y0, crps0, logs0, y1, ...]`.
 */
export function scoreProfile(mu: number, sigma: number, lo: number, hi: number, n: number): Float64Array;

/**
 * Flattened `seasonal_curve`: `[t0, mu0, sigma0, t1, ...]`.
 */
export function seasonalCurve(loc: Float64Array, scale: Float64Array, ens_mean: number, ens_sd: number, days: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly pitHistogram: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly scoreProfile: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly seasonalCurve: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
