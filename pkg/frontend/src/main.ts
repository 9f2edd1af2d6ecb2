import { ApiClient } from "./api.js";
import { Editor, EditorView } from "./editor.js";
import type { Banner } from "./types.js";

function element<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function asDataUrl(b64: string): string {
  return `data:image/png;base64,${b64}`;
}

function buildView(onThumbClick: (alpha: number) => void): EditorView {
  const output = element<HTMLImageElement>("output");
  const strip = element<HTMLDivElement>("strip");
  const sigmaLabel = element<HTMLSpanElement>("sigma");
  const banner = element<HTMLDivElement>("banner");
  const bannerText = element<HTMLSpanElement>("banner-text");

  return {
    renderResult(image: string): void {
      output.src = asDataUrl(image);
    },
    renderStrip(frames: string[], alphas: number[], sigma: number): void {
      strip.replaceChildren();
      frames.forEach((frame, i) => {
        const cell = document.createElement("figure");
        cell.className = "thumb";
        const img = document.createElement("img");
        img.src = asDataUrl(frame);
        img.addEventListener("click", () => onThumbClick(alphas[i] ?? 0));
        const caption = document.createElement("figcaption");
        caption.textContent = `α=${(alphas[i] ?? 0).toFixed(1)}`;
        cell.append(img, caption);
        strip.append(cell);
      });
      sigmaLabel.textContent = `σ=${sigma}`;
    },
    showError(info: Banner): void {
      bannerText.textContent = `HTTP ${info.status}: ${info.message}`;
      banner.hidden = false;
    },
    clearError(): void {
      banner.hidden = true;
    },
  };
}

function buildSliders(editor: Editor, names: string[]): void {
  const panel = element<HTMLDivElement>("sliders");
  panel.replaceChildren();
  for (const name of names) {
    const row = document.createElement("label");
    row.className = "slider-row";
    const title = document.createElement("span");
    title.textContent = name;
    const value = document.createElement("span");
    value.textContent = "0";
    const input = document.createElement("input");
    input.type = "range";
    input.min = "-1";
    input.max = "1";
    input.step = "0.01";
    input.value = "0";
    input.addEventListener("input", () => {
      editor.setSlider(name, Number(input.value));
      const snapped = editor.state.sliders[name] ?? 0;
      input.value = String(snapped);
      value.textContent = snapped.toFixed(2);
    });
    row.append(title, input, value);
    panel.append(row);
  }
}

async function connect(): Promise<void> {
  const base = element<HTMLInputElement>("base-url").value;
  const api = new ApiClient(base, (url, init) => fetch(url, init));
  const info = await api.attributes();

  let editor: Editor;
  const view = buildView((alpha) => {
    element<HTMLInputElement>("alpha").value = String(alpha);
    editor.setAlpha(alpha);
  });
  editor = new Editor(api, view, info.names);
  buildSliders(editor, info.names);

  const alphaInput = element<HTMLInputElement>("alpha");
  alphaInput.addEventListener("input", () => editor.setAlpha(Number(alphaInput.value)));

  element<HTMLInputElement>("file").addEventListener("change", (event) => {
    const file = (event.target as HTMLInputElement).files?.[0];
    if (!file) {
      return;
    }
    const reader = new FileReader();
    reader.onload = () => {
      const b64 = String(reader.result).split(",", 2)[1] ?? "";
      element<HTMLImageElement>("input-image").src = asDataUrl(b64);
      editor.loadImage(b64);
    };
    reader.readAsDataURL(file);
  });

  element<HTMLButtonElement>("strip-button").addEventListener("click", () => {
    const steps = Number(element<HTMLInputElement>("steps").value) || 10;
    void editor.showStrip(steps);
  });

  element<HTMLButtonElement>("banner-dismiss").addEventListener("click", () =>
    editor.dismissError(),
  );

  element<HTMLDivElement>("workspace").hidden = false;
}

element<HTMLButtonElement>("connect").addEventListener("click", () => {
  void connect().catch((error) => {
    const banner = element<HTMLDivElement>("banner");
    element<HTMLSpanElement>("banner-text").textContent = String(error);
    banner.hidden = false;
  });
});
