/**
 * Quaternion / rigid-transform math mirroring the server conventions:
 * quaternions are [w, x, y, z] with unit norm; a transform "A to B" is the
 * pose of frame B in frame A, and apply() maps B-frame points into A.
 */

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number];

export interface Transform {
  quat: Quat;
  pos: Vec3;
}

export function identity(): Transform {
  return { quat: [1, 0, 0, 0], pos: [0, 0, 0] };
}

export function quatNormalize(q: Quat): Quat {
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  if (n < 1e-12) throw new Error("zero quaternion");
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}

export function quatMul(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

export function quatConj(q: Quat): Quat {
  return [q[0], -q[1], -q[2], -q[3]];
}

export function quatRotate(q: Quat, v: Vec3): Vec3 {
  const [w, ux, uy, uz] = q;
  const [vx, vy, vz] = v;
  const tx = 2 * (uy * vz - uz * vy);
  const ty = 2 * (uz * vx - ux * vz);
  const tz = 2 * (ux * vy - uy * vx);
  return [
    vx + w * tx + (uy * tz - uz * ty),
    vy + w * ty + (uz * tx - ux * tz),
    vz + w * tz + (ux * ty - uy * tx),
  ];
}

export function quatFromAxisAngle(axis: Vec3, angle: number): Quat {
  const half = angle / 2;
  const s = Math.sin(half);
  return [Math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s];
}

export function quatFromEuler(yaw: number, pitch: number, roll: number): Quat {
  const qz = quatFromAxisAngle([0, 0, 1], yaw);
  const qy = quatFromAxisAngle([0, 1, 0], pitch);
  const qx = quatFromAxisAngle([1, 0, 0], roll);
  return quatNormalize(quatMul(qz, quatMul(qy, qx)));
}

export function compose(a: Transform, b: Transform): Transform {
  const p = quatRotate(a.quat, b.pos);
  return {
    quat: quatNormalize(quatMul(a.quat, b.quat)),
    pos: [a.pos[0] + p[0], a.pos[1] + p[1], a.pos[2] + p[2]],
  };
}

export function invert(t: Transform): Transform {
  const qi = quatConj(t.quat);
  const p = quatRotate(qi, t.pos);
  return { quat: qi, pos: [-p[0], -p[1], -p[2]] };
}

export function apply(t: Transform, v: Vec3): Vec3 {
  const r = quatRotate(t.quat, v);
  return [r[0] + t.pos[0], r[1] + t.pos[1], r[2] + t.pos[2]];
}

export function rotationAngle(a: Quat, b: Quat): number {
  const rel = quatMul(quatConj(a), b);
  return 2 * Math.atan2(Math.hypot(rel[1], rel[2], rel[3]), Math.abs(rel[0]));
}

export function transformFromJson(d: { quat: number[]; pos: number[] }): Transform {
  return {
    quat: quatNormalize([d.quat[0], d.quat[1], d.quat[2], d.quat[3]]),
    pos: [d.pos[0], d.pos[1], d.pos[2]],
  };
}
