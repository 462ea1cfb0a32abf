/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_fromJson: (a: number, b: number) => [number, number, number];
export const demo_losMap: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_new: () => number;
export const demo_probeTraces: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_scenarioJson: (a: number) => [number, number];
export const demo_simulate: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const demo_snapshot: (a: number, b: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
