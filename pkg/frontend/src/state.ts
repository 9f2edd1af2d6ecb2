import type { EditorState } from "./types.js";

/** Slider values this close to -1, 0, or +1 snap onto the exact point. */
export const SNAP_RADIUS = 0.05;

const GRID_EPS = 1e-9;

export function snapSlider(value: number): number {
  const clamped = Math.max(-1, Math.min(1, value));
  for (const point of [-1, 0, 1]) {
    if (Math.abs(clamped - point) <= SNAP_RADIUS) {
      return point;
    }
  }
  return clamped;
}

export function clampAlpha(value: number): number {
  return Math.max(0, Math.min(1, value));
}

export function initialState(names: string[]): EditorState {
  const sliders: Record<string, number> = {};
  for (const name of names) {
    sliders[name] = 0;
  }
  return { image: null, sliders, alpha: 1, frames: [], inFlight: false };
}

/**
 * Edits for a translate request: sliders at zero are omitted (an
 * unmentioned attribute means "unchanged"), the rest scale by alpha.
 */
export function activeEdits(state: EditorState): Record<string, number> {
  const edits: Record<string, number> = {};
  for (const [name, value] of Object.entries(state.sliders)) {
    if (value !== 0) {
      edits[name] = value * state.alpha;
    }
  }
  return edits;
}

/** Edits for an interpolation strip: the raw slider values, unscaled. */
export function stripEdits(state: EditorState): Record<string, number> {
  const edits: Record<string, number> = {};
  for (const [name, value] of Object.entries(state.sliders)) {
    if (value !== 0) {
      edits[name] = value;
    }
  }
  return edits;
}

/** Frame index when alpha sits on the strip's grid, else null. */
export function gridIndex(alpha: number, steps: number): number | null {
  const scaled = alpha * steps;
  const nearest = Math.round(scaled);
  if (Math.abs(scaled - nearest) <= GRID_EPS * steps && nearest >= 0 && nearest <= steps) {
    return nearest;
  }
  return null;
}

/** Stable identity for "same image, same sliders" cache comparisons. */
export function editSignature(state: EditorState): string {
  const entries = Object.entries(state.sliders)
    .filter(([, value]) => value !== 0)
    .sort(([a], [b]) => (a < b ? -1 : 1));
  return JSON.stringify([state.image, entries]);
}
