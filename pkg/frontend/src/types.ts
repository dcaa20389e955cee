export type Lod = "low" | "medium" | "high";
export type TransferFunction = "jet" | "viridis";

export interface DatasetInfo {
  id: string;
  voxels?: number;
  leaf_count?: number;
  grid_class?: string;
  error?: string;
}

export interface GridStats {
  active_voxels: number;
  leaf_count: number;
  tile_count: number;
  dense_leaf_count: number;
}

export interface FootprintReport {
  gaussian_count: number;
  sphere_count: number;
  ellipsoid_count: number;
  payload_bytes: number;
  grid_class: string;
  lod: Lod;
  grid_stats?: GridStats;
}

export interface CameraDocument {
  eye: [number, number, number];
  target: [number, number, number];
  up: [number, number, number];
  fov_deg: number;
  width: number;
  height: number;
}

export interface RenderConfigDocument {
  tf: TransferFunction;
  density_scale: number;
  samples_per_segment: number;
  t_min: number;
  max_segments: number;
  background: [number, number, number];
}

export interface RenderRequest {
  dataset: string;
  lod: Lod;
  camera: CameraDocument;
  config: RenderConfigDocument;
}
