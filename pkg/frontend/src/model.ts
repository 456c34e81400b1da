/**
 * Robot model parsing and client-side forward kinematics.
 *
 * The console loads the same model JSON the server uses and recomputes FK
 * locally for rendering; a startup handshake compares a probe configuration
 * against the server's FK to catch drift between the two implementations.
 */

import { Transform, Vec3, compose, quatFromAxisAngle, transformFromJson } from "./math.js";

export interface JointSpec {
  name: string;
  parent: number;
  origin: Transform;
  axis: Vec3;
  lower: number;
  upper: number;
}

export interface LinkSpec {
  joint: number;
  a: Vec3;
  b: Vec3;
  radius: number;
}

export interface RobotModel {
  name: string;
  joints: JointSpec[];
  links: LinkSpec[];
  order: number[];
}

export function parseModel(doc: any): RobotModel {
  if (!doc || !Array.isArray(doc.joints)) throw new Error("model document needs joints");
  const joints: JointSpec[] = doc.joints.map((j: any, k: number) => {
    if (typeof j.parent !== "number" || j.parent >= k + doc.joints.length) {
      throw new Error(`joint ${k}: bad parent`);
    }
    return {
      name: String(j.name ?? `j${k}`),
      parent: j.parent,
      origin: transformFromJson(j.origin),
      axis: [j.axis[0], j.axis[1], j.axis[2]] as Vec3,
      lower: Number(j.lower),
      upper: Number(j.upper),
    };
  });
  const links: LinkSpec[] = (doc.links ?? []).map((l: any) => ({
    joint: l.joint,
    a: [l.capsule.a[0], l.capsule.a[1], l.capsule.a[2]] as Vec3,
    b: [l.capsule.b[0], l.capsule.b[1], l.capsule.b[2]] as Vec3,
    radius: l.capsule.radius,
  }));

  // parents may appear in any order; resolve a topological order once
  const order: number[] = [];
  const placed = new Set<number>();
  while (order.length < joints.length) {
    let advanced = false;
    for (let i = 0; i < joints.length; i++) {
      if (placed.has(i)) continue;
      const p = joints[i].parent;
      if (p === -1 || placed.has(p)) {
        order.push(i);
        placed.add(i);
        advanced = true;
      }
    }
    if (!advanced) throw new Error("joint parents contain a cycle");
  }
  return { name: String(doc.name ?? "robot"), joints, links, order };
}

/** Root-frame pose of every joint frame. */
export function forwardKinematics(model: RobotModel, q: number[]): Transform[] {
  if (q.length !== model.joints.length) {
    throw new Error(`expected ${model.joints.length} joint values, got ${q.length}`);
  }
  const frames: Transform[] = new Array(model.joints.length);
  for (const i of model.order) {
    const joint = model.joints[i];
    const spin: Transform = { quat: quatFromAxisAngle(joint.axis, q[i]), pos: [0, 0, 0] };
    const local = compose(joint.origin, spin);
    frames[i] = joint.parent === -1 ? local : compose(frames[joint.parent], local);
  }
  return frames;
}

export interface WorldCapsule {
  a: Vec3;
  b: Vec3;
  radius: number;
  link: number;
}

export function linkCapsulesWorld(model: RobotModel, frames: Transform[]): WorldCapsule[] {
  return model.links.map((l, k) => ({
    a: applyT(frames[l.joint], l.a),
    b: applyT(frames[l.joint], l.b),
    radius: l.radius,
    link: k,
  }));
}

function applyT(t: Transform, v: Vec3): Vec3 {
  const [w, ux, uy, uz] = t.quat;
  const [vx, vy, vz] = v;
  const tx = 2 * (uy * vz - uz * vy);
  const ty = 2 * (uz * vx - ux * vz);
  const tz = 2 * (ux * vy - uy * vx);
  return [
    t.pos[0] + vx + w * tx + (uy * tz - uz * ty),
    t.pos[1] + vy + w * ty + (uz * tx - ux * tz),
    t.pos[2] + vz + w * tz + (ux * ty - uy * tx),
  ];
}
