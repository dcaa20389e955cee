import { ApiClient } from "./api.js";
import { formatReport } from "./stats.js";
import { Viewer } from "./viewer.js";
import type { Lod, TransferFunction } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function boot(): void {
  const frame = el<HTMLImageElement>("frame");
  const datasetSelect = el<HTMLSelectElement>("dataset");
  const lodSelect = el<HTMLSelectElement>("lod");
  const tfSelect = el<HTMLSelectElement>("tf");
  const densitySlider = el<HTMLInputElement>("density");
  const densityValue = el<HTMLSpanElement>("density-value");
  const statsPanel = el<HTMLPreElement>("stats");
  const banner = el<HTMLDivElement>("banner");

  let frameUrl: string | null = null;
  const showError = (message: string) => {
    banner.textContent = message;
    banner.hidden = false;
  };
  const api = new ApiClient("");
  const viewer = new Viewer(api, {
    onFrame(bytes) {
      const url = URL.createObjectURL(new Blob([bytes], { type: "image/png" }));
      if (frameUrl) URL.revokeObjectURL(frameUrl);
      frameUrl = url;
      frame.src = url;
      banner.hidden = true;
    },
    onStats(report) {
      const lines = formatReport(report);
      statsPanel.textContent =
        `${lines.gaussians}\n${lines.payload}\n${lines.shapes}\n${lines.grid}`;
    },
    onError: showError,
  });

  api
    .listDatasets()
    .then((datasets) => {
      for (const d of datasets) {
        const option = document.createElement("option");
        option.value = d.id;
        option.textContent = d.error ? `${d.id} (unreadable)` : d.id;
        option.disabled = Boolean(d.error);
        datasetSelect.appendChild(option);
      }
      const first = datasets.find((d) => !d.error);
      if (first) {
        datasetSelect.value = first.id;
        const span = Math.max(1, Math.cbrt(first.voxels ?? 1));
        const mid = span / 2;
        void viewer.selectDataset(first.id, span * 2.2, [mid, mid, mid]);
      }
    })
    .catch((e) => showError(String(e)));

  datasetSelect.addEventListener("change", () => {
    void viewer.selectDataset(datasetSelect.value, viewer.state.camera.distance, [
      ...viewer.state.camera.target,
    ]);
  });
  lodSelect.addEventListener("change", () => void viewer.switchLod(lodSelect.value as Lod));
  tfSelect.addEventListener("change", () => void viewer.switchTf(tfSelect.value as TransferFunction));
  densitySlider.addEventListener("change", () => {
    densityValue.textContent = densitySlider.value;
    void viewer.setDensityScale(Number(densitySlider.value));
  });

  let dragging = false;
  let panning = false;
  let lastX = 0;
  let lastY = 0;
  frame.addEventListener("mousedown", (ev) => {
    dragging = ev.button === 0;
    panning = ev.button === 2 || ev.shiftKey;
    lastX = ev.clientX;
    lastY = ev.clientY;
    ev.preventDefault();
  });
  window.addEventListener("mouseup", () => {
    dragging = panning = false;
  });
  window.addEventListener("mousemove", (ev) => {
    if (!dragging && !panning) return;
    const dx = ev.clientX - lastX;
    const dy = ev.clientY - lastY;
    lastX = ev.clientX;
    lastY = ev.clientY;
    if (panning) {
      void viewer.pan(-dx * 0.002, dy * 0.002);
    } else {
      void viewer.orbit(dx * 0.4, -dy * 0.4);
    }
  });
  frame.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    void viewer.zoom(ev.deltaY > 0 ? 1.1 : 1 / 1.1);
  });
  frame.addEventListener("contextmenu", (ev) => ev.preventDefault());
}

boot();
