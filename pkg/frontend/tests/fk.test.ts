import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { digitSkeleton, handSkeleton } from "../src/fk.js";
import { SpecDoc } from "../src/types.js";

const spec = JSON.parse(
  readFileSync(new URL("./fixtures/spec.json", import.meta.url), "utf-8"),
) as SpecDoc;
const golden = JSON.parse(
  readFileSync(new URL("./fixtures/fk_golden.json", import.meta.url), "utf-8"),
) as Record<string, { angles: Record<string, number>; tips: Record<string, number[]> }>;

describe("skeleton FK against service-computed fixtures", () => {
  for (const [name, testCase] of Object.entries(golden)) {
    it(`matches fingertips for the ${name} pose`, () => {
      const skeletons = handSkeleton(spec, testCase.angles);
      for (const skeleton of skeletons) {
        const expected = testCase.tips[skeleton.digit];
        const tip = skeleton.points[skeleton.points.length - 1];
        for (let axis = 0; axis < 3; axis++) {
          expect(Math.abs(tip[axis] - expected[axis])).toBeLessThan(1e-9);
        }
      }
    });
  }

  it("straight finger lies along the digit axis", () => {
    const index = spec.digits.find((d) => d.name === "index")!;
    const skeleton = digitSkeleton(spec, index, {});
    const tip = skeleton.points[skeleton.points.length - 1];
    expect(tip[0]).toBeCloseTo(0.027, 10);
    expect(tip[1]).toBeCloseTo(0.0, 10);
    expect(tip[2]).toBeCloseTo(0.198, 10);
  });

  it("uses exactly the five chain points per digit", () => {
    const skeletons = handSkeleton(spec, {});
    expect(skeletons).toHaveLength(5);
    for (const skeleton of skeletons) expect(skeleton.points).toHaveLength(5);
  });
});
