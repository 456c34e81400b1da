import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";

import { describe, expect, it } from "vitest";

import { forwardKinematics, linkCapsulesWorld, parseModel } from "../src/model.js";

const HERE = dirname(fileURLToPath(import.meta.url));
const MODELS = join(HERE, "..", "..", "src", "phantomarm", "models");

function loadBundled(name: string) {
  return parseModel(JSON.parse(readFileSync(join(MODELS, `${name}.json`), "utf-8")));
}

describe("client-side forward kinematics", () => {
  it("zero config of a single z joint is identity", () => {
    const model = parseModel({
      joints: [
        {
          name: "j0",
          parent: -1,
          origin: { quat: [1, 0, 0, 0], pos: [0, 0, 0] },
          axis: [0, 0, 1],
          lower: -1,
          upper: 1,
        },
      ],
      links: [],
    });
    const [f] = forwardKinematics(model, [0]);
    expect(f.pos).toEqual([0, 0, 0]);
    expect(f.quat[0]).toBeCloseTo(1, 12);
  });

  it("quarter turn moves the child mount onto the y axis", () => {
    const model = parseModel({
      joints: [
        { name: "a", parent: -1, origin: { quat: [1, 0, 0, 0], pos: [0, 0, 0] }, axis: [0, 0, 1], lower: -4, upper: 4 },
        { name: "b", parent: 0, origin: { quat: [1, 0, 0, 0], pos: [1, 0, 0] }, axis: [0, 0, 1], lower: -4, upper: 4 },
      ],
      links: [],
    });
    const frames = forwardKinematics(model, [Math.PI / 2, 0]);
    expect(frames[1].pos[0]).toBeCloseTo(0, 12);
    expect(frames[1].pos[1]).toBeCloseTo(1, 12);
  });

  it("loads the bundled hand and arm models", () => {
    const hand = loadBundled("hand16");
    expect(hand.joints.length).toBe(16);
    expect(hand.links.length).toBe(12);
    const frames = forwardKinematics(hand, new Array(16).fill(0));
    const caps = linkCapsulesWorld(hand, frames);
    expect(caps.length).toBe(12);
    const combined = loadBundled("armhand22");
    expect(combined.joints.length).toBe(22);
  });

  it("rejects dimension mismatches and cycles", () => {
    const hand = loadBundled("hand16");
    expect(() => forwardKinematics(hand, [0, 0])).toThrow(/expected 16/);
    expect(() =>
      parseModel({
        joints: [
          { name: "a", parent: 1, origin: { quat: [1, 0, 0, 0], pos: [0, 0, 0] }, axis: [0, 0, 1], lower: -1, upper: 1 },
          { name: "b", parent: 0, origin: { quat: [1, 0, 0, 0], pos: [0, 0, 0] }, axis: [0, 0, 1], lower: -1, upper: 1 },
        ],
      }),
    ).toThrow(/cycle/);
  });
});
