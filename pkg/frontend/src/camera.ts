import type { CameraDocument } from "./types.js";

const DEG = Math.PI / 180;
const MIN_DISTANCE = 1e-3;
const MAX_ELEVATION = 89.9;

export type Vec3 = [number, number, number];

/**
 * Trackball-style orbit camera: azimuth/elevation/distance around a target.
 * Elevation stays inside (-90, 90) degrees and distance stays positive,
 * so the derived eye position is always well defined.
 */
export class OrbitCamera {
  azimuthDeg: number;
  elevationDeg: number;
  distance: number;
  target: Vec3;
  fovDeg: number;

  constructor(
    target: Vec3 = [0, 0, 0],
    distance = 10,
    azimuthDeg = 0,
    elevationDeg = 20,
    fovDeg = 45,
  ) {
    this.target = [...target];
    this.distance = Math.max(distance, MIN_DISTANCE);
    this.azimuthDeg = azimuthDeg;
    this.elevationDeg = clampElevation(elevationDeg);
    this.fovDeg = fovDeg;
  }

  orbit(dAzimuthDeg: number, dElevationDeg: number): void {
    this.azimuthDeg = wrapDegrees(this.azimuthDeg + dAzimuthDeg);
    this.elevationDeg = clampElevation(this.elevationDeg + dElevationDeg);
  }

  /** Multiplicative zoom; factor > 1 moves away, < 1 moves in. */
  zoom(factor: number): void {
    this.distance = Math.max(this.distance * factor, MIN_DISTANCE);
  }

  /** Shift the target within the current view plane. */
  pan(dxView: number, dyView: number): void {
    const { right, up } = this.basis();
    const scale = this.distance;
    for (let i = 0; i < 3; i++) {
      this.target[i] += (right[i] * dxView + up[i] * dyView) * scale;
    }
  }

  eye(): Vec3 {
    const az = this.azimuthDeg * DEG;
    const el = this.elevationDeg * DEG;
    const cosEl = Math.cos(el);
    return [
      this.target[0] + this.distance * cosEl * Math.sin(az),
      this.target[1] + this.distance * Math.sin(el),
      this.target[2] - this.distance * cosEl * Math.cos(az),
    ];
  }

  private basis(): { forward: Vec3; right: Vec3; up: Vec3 } {
    const eye = this.eye();
    const forward = normalize([
      this.target[0] - eye[0],
      this.target[1] - eye[1],
      this.target[2] - eye[2],
    ]);
    const right = normalize(cross(forward, [0, 1, 0]));
    const up = cross(right, forward);
    return { forward, right, up };
  }

  toDocument(width: number, height: number): CameraDocument {
    return {
      eye: this.eye(),
      target: [...this.target],
      up: [0, 1, 0],
      fov_deg: this.fovDeg,
      width,
      height,
    };
  }
}

export function wrapDegrees(deg: number): number {
  let d = deg % 360;
  if (d < 0) d += 360;
  return d;
}

function clampElevation(deg: number): number {
  return Math.min(Math.max(deg, -MAX_ELEVATION), MAX_ELEVATION);
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
}

function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}
