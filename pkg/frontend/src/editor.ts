import type { ApiClient } from "./api.js";
import { ApiError } from "./api.js";
import {
  activeEdits,
  clampAlpha,
  editSignature,
  gridIndex,
  initialState,
  snapSlider,
  stripEdits,
} from "./state.js";
import type { Banner, EditorState } from "./types.js";

export interface EditorView {
  renderResult(image: string): void;
  renderStrip(frames: string[], alphas: number[], sigma: number): void;
  showError(banner: Banner): void;
  clearError(): void;
}

interface StripCache {
  signature: string;
  steps: number;
  frames: string[];
}

export const DEBOUNCE_MS = 150;

/**
 * Wires slider state to the inference API. Slider changes are debounced,
 * every request carries a monotonically increasing id, and a response is
 * dropped when a newer request has been issued since (no stale renders).
 */
export class Editor {
  readonly state: EditorState;
  banner: Banner | null = null;

  private readonly api: ApiClient;
  private readonly view: EditorView;
  private readonly names: Set<string>;
  private readonly debounceMs: number;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private requestId = 0;
  private cache: StripCache | null = null;

  constructor(
    api: ApiClient,
    view: EditorView,
    names: string[],
    options: { debounceMs?: number } = {},
  ) {
    this.api = api;
    this.view = view;
    this.names = new Set(names);
    this.debounceMs = options.debounceMs ?? DEBOUNCE_MS;
    this.state = initialState(names);
  }

  loadImage(image: string): void {
    this.state.image = image;
    this.cache = null;
    this.scheduleApply();
  }

  setSlider(name: string, value: number): void {
    if (!this.names.has(name)) {
      throw new Error(`unknown attribute ${name}`);
    }
    this.state.sliders[name] = snapSlider(value);
    this.scheduleApply();
  }

  setAlpha(value: number): void {
    this.state.alpha = clampAlpha(value);
    if (this.renderFromCache()) {
      return;
    }
    this.scheduleApply();
  }

  /** Request the interpolation strip right away (no debounce). */
  async showStrip(steps: number): Promise<void> {
    if (this.state.image === null) {
      return;
    }
    this.cancelPending();
    const id = this.issue();
    const signature = editSignature(this.state);
    try {
      const response = await this.api.interpolate(
        this.state.image,
        stripEdits(this.state),
        steps,
      );
      if (!this.settle(id)) {
        return;
      }
      this.cache = { signature, steps, frames: response.frames };
      this.state.frames = response.frames;
      const alphas = response.frames.map((_, i) => i / steps);
      this.view.renderStrip(response.frames, alphas, response.sigma);
    } catch (error) {
      this.fail(id, error);
    }
  }

  dismissError(): void {
    this.banner = null;
    this.view.clearError();
  }

  /** Serve G(x, alpha v) from the last strip when alpha lands on its grid. */
  private renderFromCache(): boolean {
    if (this.cache === null || this.cache.signature !== editSignature(this.state)) {
      return false;
    }
    const index = gridIndex(this.state.alpha, this.cache.steps);
    const frame = index === null ? undefined : this.cache.frames[index];
    if (frame === undefined) {
      return false;
    }
    this.view.renderResult(frame);
    return true;
  }

  private scheduleApply(): void {
    if (this.state.image === null) {
      return;
    }
    this.cancelPending();
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.apply();
    }, this.debounceMs);
  }

  private cancelPending(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }

  private async apply(): Promise<void> {
    if (this.state.image === null) {
      return;
    }
    const id = this.issue();
    try {
      const response = await this.api.translate(this.state.image, activeEdits(this.state));
      if (!this.settle(id)) {
        return;
      }
      this.view.renderResult(response.image);
    } catch (error) {
      this.fail(id, error);
    }
  }

  private issue(): number {
    this.state.inFlight = true;
    return ++this.requestId;
  }

  /** True when this response is current; stale ids are never rendered. */
  private settle(id: number): boolean {
    if (id !== this.requestId) {
      return false;
    }
    this.state.inFlight = false;
    if (this.banner !== null) {
      this.dismissError();
    }
    return true;
  }

  private fail(id: number, error: unknown): void {
    if (id !== this.requestId) {
      return;
    }
    this.state.inFlight = false;
    const banner =
      error instanceof ApiError
        ? { status: error.status, message: error.message }
        : { status: 0, message: String(error) };
    this.banner = banner;
    this.view.showError(banner);
  }
}
