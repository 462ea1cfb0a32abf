/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    static fromJson(text: string): Demo;
    losMap(grid_res_m: number, samples: number): string;
    /**
     * The default factory floor.
     */
    constructor();
    probeTraces(duration_s: number, dt_s: number): string;
    scenarioJson(): string;
    simulate(strategy: string, interarrival_ms: number, duration_s: number, seed: number): string;
    snapshot(t: number): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_fromJson: (a: number, b: number) => [number, number, number];
    readonly demo_losMap: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_new: () => number;
    readonly demo_probeTraces: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_scenarioJson: (a: number) => [number, number];
    readonly demo_simulate: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly demo_snapshot: (a: number, b: number) => [number, number];
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
