/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_trial_free: (a: number, b: number) => void;
export const mds_field: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number) => [number, number];
export const rds_solve: (a: number, b: number, c: number, d: number) => [number, number];
export const run_offline: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const trial_advance: (a: number, b: number) => [number, number, number];
export const trial_command: (a: number, b: number, c: number) => void;
export const trial_frame: (a: number) => [number, number];
export const trial_live_metrics: (a: number) => [number, number];
export const trial_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const trial_report: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
