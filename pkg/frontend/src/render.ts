/**
 * Geometry for the live view: planar two-link arm poses and the affine map
 * from world metres to canvas pixels.  Pure functions only — main.ts owns
 * the actual canvas context.
 *
 * The world is viewed through the same orthographic camera that produces
 * the silhouette frames: continuous pixel coordinates (u right, v down)
 * with u = (x - cx) / pitch + width/2 and v = height/2 - (y - cy) / pitch.
 * The canvas upscales those by an integer factor so the 128x96 frame fills
 * a 640x480 panel.
 */

import { ArmGeometry, CameraGeometry, Vec2 } from "./wire.js";

export interface WorldToCanvas {
  (p: Vec2): Vec2;
  /** canvas pixels per world metre, for sizing strokes and markers */
  scale: number;
}

export function makeWorldToCanvas(cam: CameraGeometry, upscale: number): WorldToCanvas {
  const fn = ((p: Vec2): Vec2 => [
    ((p[0] - cam.center[0]) / cam.pitch + cam.width / 2) * upscale,
    (cam.height / 2 - (p[1] - cam.center[1]) / cam.pitch) * upscale,
  ]) as WorldToCanvas;
  fn.scale = upscale / cam.pitch;
  return fn;
}

/** Base, elbow and end-effector of the two-link arm, in world metres. */
export function armPoints(arm: ArmGeometry, theta: Vec2): [Vec2, Vec2, Vec2] {
  const [l1, l2] = arm.link_lengths;
  const [bx, by] = arm.base;
  const a1 = theta[0];
  const a12 = theta[0] + theta[1];
  const elbow: Vec2 = [bx + l1 * Math.cos(a1), by + l1 * Math.sin(a1)];
  const tip: Vec2 = [elbow[0] + l2 * Math.cos(a12), elbow[1] + l2 * Math.sin(a12)];
  return [[bx, by], elbow, tip];
}

/** Cloth node indices as straight strokes: a 3x6 lattice drawn row by row
 *  and column by column.  Only adjacency is assumed; the node count comes
 *  from the state message. */
export function latticeEdges(nNodes: number, rowLength: number): Array<[number, number]> {
  const edges: Array<[number, number]> = [];
  const rows = Math.floor(nNodes / rowLength);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < rowLength; c++) {
      const i = r * rowLength + c;
      if (c + 1 < rowLength) edges.push([i, i + 1]);
      if (r + 1 < rows) edges.push([i, i + rowLength]);
    }
  }
  return edges;
}
