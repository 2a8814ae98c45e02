/**
 * Tile visuals.  Synthetic stores reference images as "synthetic://...",
 * which nothing can load; those render as a deterministic color block
 * derived from the item id so tiles are stable and distinguishable.
 */

export interface TileVisual {
  kind: "image" | "color";
  value: string;
}

function hashString(text: string): number {
  let h = 2166136261;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 16777619);
  }
  return h >>> 0;
}

export function colorForItem(itemId: string): string {
  const h = hashString(itemId);
  const hue = h % 360;
  const sat = 45 + (Math.floor(h / 360) % 30);
  const light = 35 + (Math.floor(h / 10800) % 25);
  return `hsl(${hue}, ${sat}%, ${light}%)`;
}

export function tileVisual(itemId: string, imageRef?: string): TileVisual {
  if (imageRef && !imageRef.startsWith("synthetic://")) {
    return { kind: "image", value: imageRef };
  }
  return { kind: "color", value: colorForItem(itemId) };
}
