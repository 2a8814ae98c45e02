import { describe, expect, it } from "vitest";

import { gridSide, patchRect, snapBoxToPatches } from "../src/regions.js";

const TILE = 300;

describe("gridSide", () => {
  it("accepts square patch counts", () => {
    expect(gridSide(1)).toBe(1);
    expect(gridSide(4)).toBe(2);
    expect(gridSide(9)).toBe(3);
    expect(gridSide(16)).toBe(4);
  });

  it("rejects non-square patch counts", () => {
    for (const n of [2, 3, 5, 8, 12]) {
      expect(() => gridSide(n)).toThrow(/square/);
    }
  });
});

describe("snapBoxToPatches on the 3x3 default", () => {
  it("covers the whole grid with a full-tile box", () => {
    const all = snapBoxToPatches(
      { x0: 0, y0: 0, x1: TILE, y1: TILE },
      TILE,
      TILE,
      9,
    );
    expect(all).toEqual([0, 1, 2, 3, 4, 5, 6, 7, 8]);
  });

  it("snaps a box inside one cell to that single patch", () => {
    expect(
      snapBoxToPatches({ x0: 10, y0: 10, x1: 40, y1: 40 }, TILE, TILE, 9),
    ).toEqual([0]);
    expect(
      snapBoxToPatches({ x0: 110, y0: 110, x1: 140, y1: 160 }, TILE, TILE, 9),
    ).toEqual([4]);
    expect(
      snapBoxToPatches({ x0: 210, y0: 210, x1: 290, y1: 290 }, TILE, TILE, 9),
    ).toEqual([8]);
  });

  it("expands a partial overlap to the whole patch", () => {
    /* crosses the first column boundary by one pixel */
    expect(
      snapBoxToPatches({ x0: 50, y0: 10, x1: 101, y1: 40 }, TILE, TILE, 9),
    ).toEqual([0, 1]);
  });

  it("is corner-order independent", () => {
    const forward = snapBoxToPatches(
      { x0: 20, y0: 30, x1: 250, y1: 140 },
      TILE,
      TILE,
      9,
    );
    const backward = snapBoxToPatches(
      { x0: 250, y0: 140, x1: 20, y1: 30 },
      TILE,
      TILE,
      9,
    );
    expect(backward).toEqual(forward);
    expect(forward).toEqual([0, 1, 2, 3, 4, 5]);
  });

  it("treats a click as the patch under the point", () => {
    expect(
      snapBoxToPatches({ x0: 150, y0: 150, x1: 150, y1: 150 }, TILE, TILE, 9),
    ).toEqual([4]);
    expect(
      snapBoxToPatches({ x0: 0, y0: 0, x1: 0, y1: 0 }, TILE, TILE, 9),
    ).toEqual([0]);
  });

  it("clamps boxes that spill past the tile", () => {
    expect(
      snapBoxToPatches({ x0: -50, y0: -10, x1: 360, y1: 20 }, TILE, TILE, 9),
    ).toEqual([0, 1, 2]);
    expect(
      snapBoxToPatches({ x0: 290, y0: 290, x1: 500, y1: 500 }, TILE, TILE, 9),
    ).toEqual([8]);
  });

  it("returns sorted unique indices", () => {
    const patches = snapBoxToPatches(
      { x0: 0, y0: 0, x1: 299, y1: 299 },
      TILE,
      TILE,
      9,
    );
    expect(patches).toEqual([...new Set(patches)].sort((a, b) => a - b));
  });

  it("handles non-square tiles and other grids", () => {
    expect(
      snapBoxToPatches({ x0: 0, y0: 0, x1: 99, y1: 49 }, 400, 200, 4),
    ).toEqual([0]);
    expect(
      snapBoxToPatches({ x0: 0, y0: 0, x1: 399, y1: 199 }, 400, 200, 4),
    ).toEqual([0, 1, 2, 3]);
  });
});

describe("patchRect", () => {
  it("tiles the grid exactly", () => {
    const r4 = patchRect(4, TILE, TILE, 9);
    expect(r4).toEqual({ x: 100, y: 100, w: 100, h: 100 });
    expect(patchRect(0, TILE, TILE, 9).x).toBe(0);
    expect(patchRect(8, TILE, TILE, 9)).toEqual({
      x: 200,
      y: 200,
      w: 100,
      h: 100,
    });
  });

  it("rejects out-of-range indices", () => {
    expect(() => patchRect(9, TILE, TILE, 9)).toThrow(/out of range/);
    expect(() => patchRect(-1, TILE, TILE, 9)).toThrow(/out of range/);
  });

  it("round-trips with snapping: every patch rect snaps to itself", () => {
    for (let i = 0; i < 9; i++) {
      const r = patchRect(i, TILE, TILE, 9);
      const snapped = snapBoxToPatches(
        { x0: r.x + 1, y0: r.y + 1, x1: r.x + r.w - 1, y1: r.y + r.h - 1 },
        TILE,
        TILE,
        9,
      );
      expect(snapped).toEqual([i]);
    }
  });
});
