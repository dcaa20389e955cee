import type { FootprintReport } from "./types.js";

function formatCount(n: number): string {
  if (n >= 1_000_000) return `${(n / 1_000_000).toFixed(1)}M`;
  if (n >= 1_000) return `${(n / 1_000).toFixed(1)}K`;
  return String(n);
}

function formatBytes(n: number): string {
  if (n >= 1_000_000) return `${(n / 1_000_000).toFixed(1)} MB`;
  if (n >= 1_000) return `${(n / 1_000).toFixed(1)} kB`;
  return `${n} B`;
}

export interface StatsLines {
  gaussians: string;
  payload: string;
  shapes: string;
  grid: string;
}

export function formatReport(report: FootprintReport): StatsLines {
  const g = report.grid_stats;
  return {
    gaussians: `${report.gaussian_count.toLocaleString("en-US")} gaussians (${report.lod})`,
    payload: `${formatBytes(report.payload_bytes)} payload`,
    shapes: `${formatCount(report.sphere_count)} spheres / ${formatCount(report.ellipsoid_count)} ellipsoids`,
    grid: g
      ? `${formatCount(g.active_voxels)} voxels, ${g.leaf_count} leaves, ${g.tile_count} tiles`
      : "",
  };
}
