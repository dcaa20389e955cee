import { OrbitCamera } from "./camera.js";
import type { Lod, RenderConfigDocument, RenderRequest, TransferFunction } from "./types.js";

export interface ViewerState {
  dataset: string | null;
  lod: Lod;
  tf: TransferFunction;
  densityScale: number;
  camera: OrbitCamera;
  frameWidth: number;
  frameHeight: number;
}

export function initialState(): ViewerState {
  return {
    dataset: null,
    lod: "low",
    tf: "viridis",
    densityScale: 2.0,
    camera: new OrbitCamera(),
    frameWidth: 512,
    frameHeight: 512,
  };
}

export function renderConfig(state: ViewerState): RenderConfigDocument {
  return {
    tf: state.tf,
    density_scale: state.densityScale,
    samples_per_segment: 4,
    t_min: 0.01,
    max_segments: 512,
    background: [0, 0, 0],
  };
}

/** Pure mapping: identical state yields an identical request body. */
export function buildRenderRequest(state: ViewerState): RenderRequest {
  if (state.dataset === null) {
    throw new Error("no dataset selected");
  }
  return {
    dataset: state.dataset,
    lod: state.lod,
    camera: state.camera.toDocument(state.frameWidth, state.frameHeight),
    config: renderConfig(state),
  };
}
