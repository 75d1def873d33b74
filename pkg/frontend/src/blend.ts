/**
 * Per-pixel alpha blend of a label overlay onto a grayscale base slice.
 *
 * out = (1 - opacity * mask_alpha) * base + opacity * mask_alpha * label
 *
 * where mask_alpha comes from the overlay's alpha channel (0 on unlabeled
 * pixels). Blending happens in linear 8-bit space; at opacity 0 the base
 * bytes pass through untouched.
 */

export interface Raster {
  width: number;
  height: number;
  data: Uint8ClampedArray; // RGBA, row-major
}

export class DimensionMismatch extends Error {}

export function composeOverlay(base: Raster, overlay: Raster, opacity: number): Raster {
  if (base.width !== overlay.width || base.height !== overlay.height) {
    throw new DimensionMismatch(
      `base ${base.width}x${base.height} vs overlay ${overlay.width}x${overlay.height}`,
    );
  }
  const op = Math.min(1, Math.max(0, opacity));
  const n = base.width * base.height * 4;
  const out = new Uint8ClampedArray(n);
  for (let i = 0; i < n; i += 4) {
    const a = op * (overlay.data[i + 3] / 255);
    if (a === 0) {
      out[i] = base.data[i];
      out[i + 1] = base.data[i + 1];
      out[i + 2] = base.data[i + 2];
    } else {
      out[i] = Math.round((1 - a) * base.data[i] + a * overlay.data[i]);
      out[i + 1] = Math.round((1 - a) * base.data[i + 1] + a * overlay.data[i + 1]);
      out[i + 2] = Math.round((1 - a) * base.data[i + 2] + a * overlay.data[i + 2]);
    }
    out[i + 3] = 255;
  }
  return { width: base.width, height: base.height, data: out };
}
