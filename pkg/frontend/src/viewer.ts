import { ApiClient } from "./api.js";
import { buildRenderRequest, initialState, ViewerState } from "./state.js";
import type { FootprintReport, Lod, TransferFunction } from "./types.js";

export interface ViewerHooks {
  /** Receives the PNG bytes of the most recent frame (stale frames never arrive). */
  onFrame(bytes: ArrayBuffer): void;
  onStats(report: FootprintReport): void;
  onError(message: string): void;
}

/**
 * UI-independent viewer logic: owns the state, talks to the service, and
 * pushes frames/stats/errors through the hooks. Every camera or setting
 * change issues a render; LOD changes run extract first so the stats
 * panel always reflects the displayed set.
 */
export class Viewer {
  readonly state: ViewerState = initialState();
  lastReport: FootprintReport | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly hooks: ViewerHooks,
  ) {}

  async selectDataset(id: string, viewDistance = 120, target?: [number, number, number]): Promise<void> {
    this.state.dataset = id;
    if (target) this.state.camera.target = [...target];
    this.state.camera.distance = viewDistance;
    await this.refreshStats();
    await this.requestFrame();
  }

  async switchLod(lod: Lod): Promise<void> {
    const previous = this.state.lod;
    this.state.lod = lod;
    try {
      await this.refreshStats();
    } catch (e) {
      // failed extract: keep the previous frame and roll the state back
      this.state.lod = previous;
      this.hooks.onError(e instanceof Error ? e.message : String(e));
      return;
    }
    await this.requestFrame();
  }

  async switchTf(tf: TransferFunction): Promise<void> {
    this.state.tf = tf;
    await this.requestFrame();
  }

  async setDensityScale(value: number): Promise<void> {
    this.state.densityScale = value;
    await this.requestFrame();
  }

  async orbit(dAzimuthDeg: number, dElevationDeg: number): Promise<void> {
    this.state.camera.orbit(dAzimuthDeg, dElevationDeg);
    await this.requestFrame();
  }

  async zoom(factor: number): Promise<void> {
    this.state.camera.zoom(factor);
    await this.requestFrame();
  }

  async pan(dx: number, dy: number): Promise<void> {
    this.state.camera.pan(dx, dy);
    await this.requestFrame();
  }

  private async refreshStats(): Promise<void> {
    if (this.state.dataset === null) return;
    const report = await this.api.extract(this.state.dataset, this.state.lod);
    this.lastReport = report;
    this.hooks.onStats(report);
  }

  /** Issues a render for the current state; stale responses are dropped. */
  async requestFrame(): Promise<void> {
    if (this.state.dataset === null) return;
    try {
      const bytes = await this.api.render(buildRenderRequest(this.state));
      if (bytes !== null) {
        this.hooks.onFrame(bytes);
      }
    } catch (e) {
      // keep the previous frame and state; surface the failure out of band
      this.hooks.onError(e instanceof Error ? e.message : String(e));
    }
  }
}
