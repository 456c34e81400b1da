/**
 * Software capsule renderer.
 *
 * The robot layer is drawn opaque; the phantom layer is drawn from
 * phantom_q and alpha-blended over the scene, which reproduces the overlay
 * compositing contract without a camera feed. Rendering into plain RGBA
 * buffers keeps the pipeline testable pixel-for-pixel without a DOM: the
 * browser shell just copies the buffer into a canvas.
 */

import { Transform, Vec3, apply, invert } from "./math.js";
import { WorldCapsule } from "./model.js";

export interface OrthoCamera {
  kind: "ortho";
  /** world-plane axes mapped to screen x/y; top-down uses x->u, y->v */
  center: [number, number];
  scale: number; // pixels per meter
}

export interface PinholeCamera {
  kind: "pinhole";
  pose: Transform; // base to camera (camera looks along +z)
  fx: number;
  fy: number;
  cx: number;
  cy: number;
}

export type Camera = OrthoCamera | PinholeCamera;

export interface Rgba {
  r: number;
  g: number;
  b: number;
  a: number;
}

export interface Layer {
  width: number;
  height: number;
  /** premultiplied-free RGBA, row major */
  data: Uint8ClampedArray;
  /** coverage per pixel (0 or 1), used by the diff harness */
  mask: Uint8Array;
}

export function emptyLayer(width: number, height: number): Layer {
  return { width, height, data: new Uint8ClampedArray(width * height * 4), mask: new Uint8Array(width * height) };
}

interface Projected {
  ax: number;
  ay: number;
  bx: number;
  by: number;
  radius: number;
  depth: number;
}

function projectCapsule(cam: Camera, c: WorldCapsule, width: number, height: number): Projected | null {
  if (cam.kind === "ortho") {
    return {
      ax: (c.a[0] - cam.center[0]) * cam.scale + width / 2,
      ay: (c.a[1] - cam.center[1]) * cam.scale + height / 2,
      bx: (c.b[0] - cam.center[0]) * cam.scale + width / 2,
      by: (c.b[1] - cam.center[1]) * cam.scale + height / 2,
      radius: c.radius * cam.scale,
      depth: -(c.a[2] + c.b[2]) / 2,
    };
  }
  const inv = invert(cam.pose);
  const pa = apply(inv, c.a);
  const pb = apply(inv, c.b);
  if (pa[2] <= 0.01 || pb[2] <= 0.01) return null; // behind the camera
  const za = pa[2];
  const zb = pb[2];
  return {
    ax: (cam.fx * pa[0]) / za + cam.cx,
    ay: (cam.fy * pa[1]) / za + cam.cy,
    bx: (cam.fx * pb[0]) / zb + cam.cx,
    by: (cam.fy * pb[1]) / zb + cam.cy,
    radius: (c.radius * cam.fx) / Math.min(za, zb),
    depth: (za + zb) / 2,
  };
}

function drawProjected(layer: Layer, p: Projected, color: Rgba) {
  const { width, height, data, mask } = layer;
  const x0 = Math.max(0, Math.floor(Math.min(p.ax, p.bx) - p.radius - 1));
  const x1 = Math.min(width - 1, Math.ceil(Math.max(p.ax, p.bx) + p.radius + 1));
  const y0 = Math.max(0, Math.floor(Math.min(p.ay, p.by) - p.radius - 1));
  const y1 = Math.min(height - 1, Math.ceil(Math.max(p.ay, p.by) + p.radius + 1));
  const dx = p.bx - p.ax;
  const dy = p.by - p.ay;
  const len2 = dx * dx + dy * dy;
  const r2 = p.radius * p.radius;
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const px = x + 0.5 - p.ax;
      const py = y + 0.5 - p.ay;
      let t = len2 > 1e-12 ? (px * dx + py * dy) / len2 : 0;
      t = Math.max(0, Math.min(1, t));
      const qx = px - t * dx;
      const qy = py - t * dy;
      if (qx * qx + qy * qy <= r2) {
        const idx = y * width + x;
        data[idx * 4] = color.r;
        data[idx * 4 + 1] = color.g;
        data[idx * 4 + 2] = color.b;
        data[idx * 4 + 3] = color.a;
        mask[idx] = 1;
      }
    }
  }
}

export interface LayerStyle {
  base: Rgba;
  collided: Rgba;
}

export const ROBOT_STYLE: LayerStyle = {
  base: { r: 70, g: 120, b: 200, a: 255 },
  collided: { r: 220, g: 60, b: 60, a: 255 },
};

export const PHANTOM_STYLE: LayerStyle = {
  base: { r: 90, g: 220, b: 140, a: 255 },
  collided: { r: 240, g: 170, b: 40, a: 255 },
};

/** Draw capsules back-to-front into a fresh layer; collision labels recolor links. */
export function renderLayer(
  capsules: WorldCapsule[],
  camera: Camera,
  width: number,
  height: number,
  style: LayerStyle,
  collision: boolean[] = [],
): Layer {
  const layer = emptyLayer(width, height);
  const projected = capsules
    .map((c) => ({ p: projectCapsule(camera, c, width, height), link: c.link }))
    .filter((e): e is { p: Projected; link: number } => e.p !== null)
    .sort((a, b) => b.p.depth - a.p.depth);
  for (const { p, link } of projected) {
    drawProjected(layer, p, collision[link] ? style.collided : style.base);
  }
  return layer;
}

/** Alpha-blend the phantom layer over the scene; alpha 0 leaves it invisible. */
export function composite(scene: Layer, phantom: Layer | null, alpha: number): Layer {
  const out = emptyLayer(scene.width, scene.height);
  out.data.set(scene.data);
  out.mask.set(scene.mask);
  if (!phantom || alpha <= 0) return out;
  const a = Math.min(1, alpha);
  for (let i = 0; i < out.mask.length; i++) {
    if (!phantom.mask[i]) continue;
    const o = i * 4;
    out.data[o] = (1 - a) * out.data[o] + a * phantom.data[o];
    out.data[o + 1] = (1 - a) * out.data[o + 1] + a * phantom.data[o + 1];
    out.data[o + 2] = (1 - a) * out.data[o + 2] + a * phantom.data[o + 2];
    out.data[o + 3] = Math.max(out.data[o + 3], Math.round(255 * a));
    out.mask[i] = 1;
  }
  return out;
}

/** Count of pixels covered by exactly one of the two layers. */
export function maskDiff(a: Layer, b: Layer): number {
  if (a.mask.length !== b.mask.length) throw new Error("layer sizes differ");
  let diff = 0;
  for (let i = 0; i < a.mask.length; i++) {
    if (a.mask[i] !== b.mask[i]) diff++;
  }
  return diff;
}

export function coverage(layer: Layer): number {
  let n = 0;
  for (let i = 0; i < layer.mask.length; i++) n += layer.mask[i];
  return n;
}
