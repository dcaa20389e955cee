import type { DatasetInfo, FootprintReport, Lod, RenderRequest } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

/**
 * Thin client for the render service. Render responses are sequenced:
 * a response is dropped when a newer render request was issued after it,
 * so the caller only ever sees the latest frame.
 */
export class ApiClient {
  private renderGeneration = 0;

  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  async listDatasets(): Promise<DatasetInfo[]> {
    const res = await this.fetchImpl(`${this.baseUrl}/api/datasets`);
    if (!res.ok) throw new ApiError(res.status, await res.text());
    return (await res.json()) as DatasetInfo[];
  }

  async extract(dataset: string, lod: Lod, options?: Record<string, unknown>): Promise<FootprintReport> {
    const res = await this.fetchImpl(`${this.baseUrl}/api/extract`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ dataset, lod, options: options ?? {} }),
    });
    if (!res.ok) throw new ApiError(res.status, await res.text());
    return (await res.json()) as FootprintReport;
  }

  /**
   * Request one frame. Resolves with the PNG bytes, or null when the
   * response went stale (a newer render started in the meantime).
   */
  async render(body: RenderRequest): Promise<ArrayBuffer | null> {
    const generation = ++this.renderGeneration;
    const res = await this.fetchImpl(`${this.baseUrl}/api/render`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw new ApiError(res.status, await res.text());
    const bytes = await res.arrayBuffer();
    return generation === this.renderGeneration ? bytes : null;
  }
}
