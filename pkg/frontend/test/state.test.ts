import { describe, expect, it } from "vitest";

import {
  activeEdits,
  clampAlpha,
  editSignature,
  gridIndex,
  initialState,
  snapSlider,
  stripEdits,
} from "../src/state.js";

describe("snapSlider", () => {
  it.each([
    [0.97, 1],
    [-0.98, -1],
    [0.03, 0],
    [-0.04, 0],
    [0.96, 1],
    [2.0, 1],
    [-3.0, -1],
  ])("snaps %f to %i", (raw, snapped) => {
    expect(snapSlider(raw)).toBe(snapped);
  });

  it.each([0.5, -0.72, 0.06, -0.94])("keeps %f free between snap points", (raw) => {
    expect(snapSlider(raw)).toBe(raw);
  });
});

describe("clampAlpha", () => {
  it("clamps into [0, 1]", () => {
    expect(clampAlpha(-0.5)).toBe(0);
    expect(clampAlpha(1.5)).toBe(1);
    expect(clampAlpha(0.3)).toBe(0.3);
  });
});

describe("initialState", () => {
  it("starts with alpha 1 and every slider at zero", () => {
    const state = initialState(["a", "b"]);
    expect(state.alpha).toBe(1);
    expect(state.sliders).toEqual({ a: 0, b: 0 });
    expect(state.image).toBeNull();
    expect(state.frames).toEqual([]);
    expect(state.inFlight).toBe(false);
  });
});

describe("activeEdits", () => {
  it("omits zero sliders and scales the rest by alpha", () => {
    const state = initialState(["a", "b", "c"]);
    state.sliders.b = 0.5;
    state.sliders.c = -1;
    state.alpha = 0.4;
    expect(activeEdits(state)).toEqual({ b: 0.2, c: -0.4 });
  });

  it("keeps nonzero slider names when alpha is zero", () => {
    const state = initialState(["a", "b"]);
    state.sliders.b = 1;
    state.alpha = 0;
    const edits = activeEdits(state);
    expect(Object.keys(edits)).toEqual(["b"]);
    expect(edits.b).toBeCloseTo(0, 12);
  });
});

describe("stripEdits", () => {
  it("sends raw slider values, zeros omitted", () => {
    const state = initialState(["a", "b"]);
    state.sliders.a = -0.8;
    state.alpha = 0.25;
    expect(stripEdits(state)).toEqual({ a: -0.8 });
  });
});

describe("gridIndex", () => {
  it.each([
    [0.3, 10, 3],
    [0.0, 10, 0],
    [1.0, 4, 4],
    [0.7, 10, 7],
    [0.1 + 0.2, 10, 3],
  ])("alpha %f on a %i-step grid is frame %i", (alpha, steps, frame) => {
    expect(gridIndex(alpha, steps)).toBe(frame);
  });

  it("misses between grid points", () => {
    expect(gridIndex(0.25, 10)).toBeNull();
    expect(gridIndex(0.999, 10)).toBeNull();
  });
});

describe("editSignature", () => {
  it("tracks image and nonzero sliders only", () => {
    const state = initialState(["a", "b"]);
    state.image = "IMG";
    const before = editSignature(state);
    state.alpha = 0.5;
    expect(editSignature(state)).toBe(before);
    state.sliders.a = 1;
    expect(editSignature(state)).not.toBe(before);
  });
});
