/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_forecast_free: (a: number, b: number) => void;
export const forecast_deltaE: (a: number) => number;
export const forecast_dt: (a: number) => number;
export const forecast_lambdaMax: (a: number) => number;
export const forecast_new: (a: number, b: number, c: number) => [number, number, number];
export const forecast_run: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const kseField: (a: number, b: number) => [number, number, number, number];
export const mapActive: () => [number, number];
export const mapPeriod: () => [number, number];
export const stabilityMap: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
