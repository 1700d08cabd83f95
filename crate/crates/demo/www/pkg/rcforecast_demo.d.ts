/* tslint:disable */
/* eslint-disable */

/**
 * A trained reservoir plus the true trajectory it is compared against.
 */
export class Forecast {
    free(): void;
    [Symbol.dispose](): void;
    constructor(system: string, seed: number);
    run(period: number, active: number, c: number, channel: number, steps: number): Float64Array;
    /**
     * δe of the last run.
     */
    readonly deltaE: number;
    readonly dt: number;
    readonly lambdaMax: number;
}

export function kseField(steps: number, seed: number): Float64Array;

export function mapActive(): Uint32Array;

export function mapPeriod(): Uint32Array;

export function stabilityMap(c: number, channel: number, time: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_forecast_free: (a: number, b: number) => void;
    readonly forecast_deltaE: (a: number) => number;
    readonly forecast_dt: (a: number) => number;
    readonly forecast_lambdaMax: (a: number) => number;
    readonly forecast_new: (a: number, b: number, c: number) => [number, number, number];
    readonly forecast_run: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly kseField: (a: number, b: number) => [number, number, number, number];
    readonly mapActive: () => [number, number];
    readonly mapPeriod: () => [number, number];
    readonly stabilityMap: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
