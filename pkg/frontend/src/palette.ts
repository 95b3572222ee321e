/** Stable, visually distinct button colors for an arbitrary class count. */

export function classColor(index: number, total: number): string {
  const hue = Math.round((360 * index) / Math.max(total, 1));
  return `hsl(${hue}, 70%, 45%)`;
}
