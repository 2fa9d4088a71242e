// Decoder for the server's f32 blobs: a single-line JSON header
// {"w": W, "h": H, "c": C, "dtype": "f32"} terminated by "\n", followed by
// raw little-endian float32 data in row-major (H, W, C) order.

export interface F32Blob {
  width: number;
  height: number;
  channels: number;
  data: Float32Array;
}

export class BlobFormatError extends Error {}

export function decodeF32Blob(buffer: ArrayBuffer): F32Blob {
  const bytes = new Uint8Array(buffer);
  const nl = bytes.indexOf(0x0a);
  if (nl < 0) throw new BlobFormatError("missing header newline");
  let header: { w: number; h: number; c: number; dtype: string };
  try {
    header = JSON.parse(new TextDecoder().decode(bytes.subarray(0, nl)));
  } catch (exc) {
    throw new BlobFormatError(`bad blob header: ${exc}`);
  }
  if (header.dtype !== "f32") {
    throw new BlobFormatError(`unsupported dtype ${JSON.stringify(header.dtype)}`);
  }
  const { w, h, c } = header;
  if (!(w > 0 && h > 0 && c > 0)) {
    throw new BlobFormatError("blob dimensions must be positive");
  }
  const expected = w * h * c * 4;
  const payload = bytes.subarray(nl + 1);
  if (payload.length !== expected) {
    throw new BlobFormatError(
      `payload length ${payload.length} != expected ${expected} for ${h}x${w}x${c}`,
    );
  }
  const view = new DataView(buffer, nl + 1);
  const data = new Float32Array(w * h * c);
  for (let i = 0; i < data.length; i++) data[i] = view.getFloat32(i * 4, true);
  return { width: w, height: h, channels: c, data };
}

/**
 * Normalize a single-channel blob to 0..255 grayscale for display.  Flat
 * inputs come back mid-gray rather than dividing by zero.
 */
export function blobToGrayscale(blob: F32Blob): Uint8ClampedArray {
  const n = blob.width * blob.height;
  const out = new Uint8ClampedArray(n);
  let min = Infinity;
  let max = -Infinity;
  for (let i = 0; i < n; i++) {
    const v = blob.data[i * blob.channels];
    if (v < min) min = v;
    if (v > max) max = v;
  }
  const span = max - min;
  for (let i = 0; i < n; i++) {
    const v = blob.data[i * blob.channels];
    out[i] = span > 0 ? Math.round(((v - min) / span) * 255) : 128;
  }
  return out;
}
