/**
 * Pixel boxes to patch indices.
 *
 * The engine's region bias operates on whole patch indices, so drawn
 * boxes never travel as raw pixels: they snap to the square patch grid
 * of the tile they were drawn on (3x3 for the 9-patch default).
 */

export interface PixelBox {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export function gridSide(patches: number): number {
  const side = Math.round(Math.sqrt(patches));
  if (side * side !== patches || side < 1) {
    throw new Error(`patch count ${patches} is not a square grid`);
  }
  return side;
}

function axisRange(
  lo: number,
  hi: number,
  extent: number,
  side: number,
): [number, number] {
  const cell = extent / side;
  const a = Math.min(lo, hi);
  const b = Math.max(lo, hi);
  const first = Math.min(side - 1, Math.max(0, Math.floor(a / cell)));
  /* a zero-area box still covers the cell under the point */
  const last = Math.min(side - 1, Math.max(0, Math.ceil(b / cell) - 1, first));
  return [first, last];
}

/** Patch indices covered by a box, sorted ascending, duplicates removed. */
export function snapBoxToPatches(
  box: PixelBox,
  tileWidth: number,
  tileHeight: number,
  patches: number,
): number[] {
  if (tileWidth <= 0 || tileHeight <= 0) {
    throw new Error("tile must have positive size");
  }
  const side = gridSide(patches);
  const [c0, c1] = axisRange(box.x0, box.x1, tileWidth, side);
  const [r0, r1] = axisRange(box.y0, box.y1, tileHeight, side);
  const indices: number[] = [];
  for (let r = r0; r <= r1; r++) {
    for (let c = c0; c <= c1; c++) {
      indices.push(r * side + c);
    }
  }
  return indices;
}

/** Pixel rectangle of one patch, for overlay rendering. */
export function patchRect(
  index: number,
  tileWidth: number,
  tileHeight: number,
  patches: number,
): { x: number; y: number; w: number; h: number } {
  const side = gridSide(patches);
  if (index < 0 || index >= patches) {
    throw new Error(`patch index ${index} out of range for ${patches}`);
  }
  const w = tileWidth / side;
  const h = tileHeight / side;
  return { x: (index % side) * w, y: Math.floor(index / side) * h, w, h };
}
