/* tslint:disable */
/* eslint-disable */

export class Image {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly height: number;
    /**
     * One-line summary for display.
     */
    readonly note: string;
    /**
     * Row-major RGBA bytes, ready for `ImageData`.
     */
    readonly rgba: Uint8Array;
    readonly width: number;
}

export function distance_heatmap(strokes_json: string, height: number, width: number, max_distance: number): Image;

export function motion_preview(seed: number, frames: number, size: number, lambda: number, ux: number, uy: number): Image;

export function tween_strip(keyframes_json: string, total_frames: number, height: number, width: number, band: number, align: boolean): Image;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_image_free: (a: number, b: number) => void;
    readonly distance_heatmap: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly image_height: (a: number) => number;
    readonly image_note: (a: number) => [number, number];
    readonly image_rgba: (a: number) => [number, number];
    readonly image_width: (a: number) => number;
    readonly motion_preview: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly tween_strip: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
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
