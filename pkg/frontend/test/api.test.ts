import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { makeFakeService } from "./fake_service.js";

describe("ApiClient", () => {
  it("lists datasets and extracts reports", async () => {
    const api = new ApiClient("", makeFakeService().fetchImpl);
    const datasets = await api.listDatasets();
    expect(datasets[0].id).toBe("dense64");
    const report = await api.extract("dense64", "medium");
    expect(report.gaussian_count).toBe(4096);
  });

  it("raises ApiError with the HTTP status on failure", async () => {
    const api = new ApiClient("", makeFakeService({ failExtract: true }).fetchImpl);
    await expect(api.extract("dense64", "low")).rejects.toMatchObject({ status: 500 });
    await expect(api.extract("dense64", "low")).rejects.toBeInstanceOf(ApiError);
  });

  it("returns null for a render response that went stale", async () => {
    const service = makeFakeService({ renderDelayMs: (i) => (i === 0 ? 25 : 0) });
    const api = new ApiClient("", service.fetchImpl);
    const body = {
      dataset: "dense64",
      lod: "low",
      camera: { eye: [0, 0, -1], target: [0, 0, 0], up: [0, 1, 0], fov_deg: 45, width: 8, height: 8 },
      config: { tf: "viridis", density_scale: 1, samples_per_segment: 4, t_min: 0.01, max_segments: 64, background: [0, 0, 0] },
    } as const;
    const slow = api.render(body as never);
    await new Promise((resolve) => setTimeout(resolve, 5));
    const fast = api.render(body as never);
    const [slowResult, fastResult] = await Promise.all([slow, fast]);
    expect(slowResult).toBeNull();
    expect(fastResult).not.toBeNull();
  });
});
