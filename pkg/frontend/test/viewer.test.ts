import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { buildRenderRequest } from "../src/state.js";
import { Viewer } from "../src/viewer.js";
import type { FootprintReport } from "../src/types.js";
import { frameBytesFor, makeFakeService } from "./fake_service.js";

function makeViewer(service = makeFakeService()) {
  const frames: ArrayBuffer[] = [];
  const stats: FootprintReport[] = [];
  const errors: string[] = [];
  const viewer = new Viewer(new ApiClient("", service.fetchImpl), {
    onFrame: (bytes) => frames.push(bytes),
    onStats: (report) => stats.push(report),
    onError: (message) => errors.push(message),
  });
  return { viewer, frames, stats, errors, service };
}

describe("viewer round trip", () => {
  it("select, orbit a full revolution, switch low->high: stats go 512 -> 32768 and the "
     + "displayed frame equals the service's direct render bytes", async () => {
    const { viewer, frames, stats, service } = makeViewer();

    await viewer.selectDataset("dense64", 140, [32, 32, 32]);
    expect(stats.at(-1)?.gaussian_count).toBe(512);
    expect(frames.length).toBe(1);

    const startPose = viewer.state.camera.toDocument(512, 512);
    for (let i = 0; i < 24; i++) {
      await viewer.orbit(15, 0);
    }
    const endPose = viewer.state.camera.toDocument(512, 512);
    for (let axis = 0; axis < 3; axis++) {
      expect(Math.abs(endPose.eye[axis] - startPose.eye[axis])).toBeLessThan(1e-6);
    }

    await viewer.switchLod("high");
    expect(stats.at(-1)?.gaussian_count).toBe(32768);

    // the frame on screen must equal the bytes the service returns for the
    // exact same request body
    const expectedBody = JSON.stringify(buildRenderRequest(viewer.state));
    expect(service.renderBodies.at(-1)).toBe(expectedBody);
    const displayed = new Uint8Array(frames.at(-1)!);
    expect(displayed).toEqual(frameBytesFor(expectedBody));
  });

  it("updates the frame but not the stats when only the transfer function changes", async () => {
    const { viewer, frames, stats } = makeViewer();
    await viewer.selectDataset("dense64");
    const statCount = stats.length;
    const before = new Uint8Array(frames.at(-1)!);
    await viewer.switchTf("jet");
    const after = new Uint8Array(frames.at(-1)!);
    expect(stats.length).toBe(statCount);
    expect(after).not.toEqual(before);
  });

  it("keeps the previous frame and rolls the LOD back when extract fails", async () => {
    const good = makeViewer();
    await good.viewer.selectDataset("dense64");
    const framesBefore = good.frames.length;

    const failing = makeFakeService({ failExtract: true });
    good.viewer["api"] = new ApiClient("", failing.fetchImpl) as never;
    await good.viewer.switchLod("high");

    expect(good.viewer.state.lod).toBe("low");
    expect(good.errors.length).toBe(1);
    expect(good.frames.length).toBe(framesBefore);
  });

  it("only displays the newest frame when requests race (latest wins)", async () => {
    // first render is slow, second is fast: the slow response must be dropped
    const service = makeFakeService({ renderDelayMs: (i) => (i === 1 ? 30 : 0) });
    const { viewer, frames } = makeViewer(service);
    await viewer.selectDataset("dense64");

    const slow = viewer.orbit(10, 0);
    await new Promise((resolve) => setTimeout(resolve, 5));
    const fast = viewer.orbit(10, 0);
    await Promise.all([slow, fast]);

    expect(service.renderBodies.length).toBe(3);
    const displayed = new Uint8Array(frames.at(-1)!);
    expect(displayed).toEqual(frameBytesFor(service.renderBodies[2]));
    // the stale body's bytes never reached the screen
    for (const frame of frames) {
      expect(new Uint8Array(frame)).not.toEqual(frameBytesFor(service.renderBodies[1]));
    }
  });
});
