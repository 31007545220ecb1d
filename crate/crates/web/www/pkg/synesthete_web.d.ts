/* tslint:disable */
/* eslint-disable */

/**
 * The attribute view of the same corpus and its stability check.
 */
export function attribute_view(classes: number, latent_dim: number, samples: number, clusters: number, subclusters: number, seed: number): string;

/**
 * Distinct classes per attribute cluster of a fresh synthetic corpus.
 */
export function instability(classes: number, latent_dim: number, samples: number, clusters: number, seed: number): string;

/**
 * Sentiment band and chosen style for one attribute point.
 */
export function pick_style(valence: number, arousal: number, negative_below: number, positive_above: number, band_gated: boolean): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly attribute_view: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly instability: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly pick_style: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
