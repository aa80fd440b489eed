export interface Box {
  x1: number;
  y1: number;
  x2: number;
  y2: number;
}

export interface Size {
  width: number;
  height: number;
}

export interface OverlayRect {
  left: number;
  top: number;
  width: number;
  height: number;
}

function clamp(value: number, lo: number, hi: number): number {
  return Math.min(Math.max(value, lo), hi);
}

export function scaleRatios(original: Size, displayed: Size): { sx: number; sy: number } {
  if (original.width <= 0 || original.height <= 0) {
    throw new RangeError(`original size must be positive, got ${original.width}x${original.height}`);
  }
  if (displayed.width <= 0 || displayed.height <= 0) {
    throw new RangeError(`displayed size must be positive, got ${displayed.width}x${displayed.height}`);
  }
  return { sx: displayed.width / original.width, sy: displayed.height / original.height };
}

/**
 * Map an annotation box from screenshot pixels into the rendered image's
 * coordinate space. Each axis scales independently, so the mapping stays
 * correct when the browser letterboxes or stretches the image. The result
 * is clamped so the rectangle never pokes outside the displayed image.
 */
export function computeOverlayRect(box: Box, original: Size, displayed: Size): OverlayRect {
  const { sx, sy } = scaleRatios(original, displayed);
  const left = clamp(box.x1 * sx, 0, displayed.width);
  const top = clamp(box.y1 * sy, 0, displayed.height);
  const right = clamp(box.x2 * sx, 0, displayed.width);
  const bottom = clamp(box.y2 * sy, 0, displayed.height);
  return {
    left,
    top,
    width: Math.max(right - left, 0),
    height: Math.max(bottom - top, 0),
  };
}

/**
 * Inverse mapping, back to screenshot pixels. Composing computeOverlayRect
 * with overlayToBox must reproduce the source box to within half a pixel
 * per coordinate; the unit tests hold that bound over random boxes.
 */
export function overlayToBox(rect: OverlayRect, original: Size, displayed: Size): Box {
  const { sx, sy } = scaleRatios(original, displayed);
  return {
    x1: rect.left / sx,
    y1: rect.top / sy,
    x2: (rect.left + rect.width) / sx,
    y2: (rect.top + rect.height) / sy,
  };
}
