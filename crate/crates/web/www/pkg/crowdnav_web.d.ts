/* tslint:disable */
/* eslint-disable */

export class Trial {
    free(): void;
    [Symbol.dispose](): void;
    advance(ticks: number): boolean;
    /**
     * Joystick command in physical units.
     */
    command(v: number, w: number): void;
    frame(): string;
    live_metrics(): string;
    /**
     * `mode` is one of `mds`, `rds`, `shared`.
     */
    constructor(mode: string, density: number, seed: number);
    report(): string;
}

export function mds_field(discs: Float64Array, gx: number, gy: number, x0: number, y0: number, x1: number, y1: number, nx: number, ny: number): Float64Array;

export function rds_solve(v: number, w: number, agents: Float64Array): Float64Array;

/**
 * Whole offline trial, for comparing controllers on one seed.
 */
export function run_offline(mode: string, density: number, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_trial_free: (a: number, b: number) => void;
    readonly mds_field: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number) => [number, number];
    readonly rds_solve: (a: number, b: number, c: number, d: number) => [number, number];
    readonly run_offline: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly trial_advance: (a: number, b: number) => [number, number, number];
    readonly trial_command: (a: number, b: number, c: number) => void;
    readonly trial_frame: (a: number) => [number, number];
    readonly trial_live_metrics: (a: number) => [number, number];
    readonly trial_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly trial_report: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
