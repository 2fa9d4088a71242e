"""Serialization for images and float tensors.

Float arrays cross process boundaries as "f32 blobs": a single-line JSON
header ``{"w": W, "h": H, "c": C, "dtype": "f32"}`` terminated by ``\\n``,
followed by the raw little-endian float32 payload in row-major (H, W, C)
order.  The format is self-describing enough for a browser client to parse
with ``DataView`` and cheap enough to stream.
"""

from __future__ import annotations

import io
import json

import numpy as np
from PIL import Image

__all__ = [
    "encode_f32_blob",
    "decode_f32_blob",
    "BlobFormatError",
    "image_to_png_bytes",
    "png_bytes_to_image",
    "to_uint8_image",
    "from_uint8_image",
]


class BlobFormatError(ValueError):
    """Raised when an f32 blob header or payload is malformed."""


def encode_f32_blob(arr: np.ndarray) -> bytes:
    """Encode an (H, W) or (H, W, C) float array as an f32 blob."""
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise BlobFormatError(f"expected 2D or 3D array, got shape {arr.shape}")
    h, w, c = arr.shape
    header = json.dumps({"w": w, "h": h, "c": c, "dtype": "f32"}) + "\n"
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return header.encode("utf-8") + payload


def decode_f32_blob(data: bytes) -> np.ndarray:
    """Decode an f32 blob into an (H, W, C) float32 array."""
    nl = data.find(b"\n")
    if nl < 0:
        raise BlobFormatError("missing header newline")
    try:
        header = json.loads(data[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BlobFormatError(f"bad blob header: {exc}") from exc
    if header.get("dtype") != "f32":
        raise BlobFormatError(f"unsupported dtype {header.get('dtype')!r}")
    try:
        w, h, c = int(header["w"]), int(header["h"]), int(header["c"])
    except (KeyError, TypeError, ValueError) as exc:
        raise BlobFormatError(f"bad blob header fields: {exc}") from exc
    if w <= 0 or h <= 0 or c <= 0:
        raise BlobFormatError("blob dimensions must be positive")
    payload = data[nl + 1 :]
    expected = w * h * c * 4
    if len(payload) != expected:
        raise BlobFormatError(
            f"payload length {len(payload)} != expected {expected} for {h}x{w}x{c}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    return flat.reshape(h, w, c).astype(np.float32)


# ---------------------------------------------------------------------------
# PNG <-> float image helpers.  Float images live in [0, 255].


def to_uint8_image(arr: np.ndarray) -> np.ndarray:
    """Clip a float image in [0, 255] and round half away from zero to uint8."""
    clipped = np.clip(arr, 0.0, 255.0)
    return np.floor(clipped + 0.5).astype(np.uint8)


def from_uint8_image(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float64)


def image_to_png_bytes(arr: np.ndarray) -> bytes:
    """PNG-encode an (H, W, 3) image given as float [0, 255] or uint8."""
    if arr.dtype != np.uint8:
        arr = to_uint8_image(arr)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_image(data: bytes) -> np.ndarray:
    """Decode PNG bytes to an (H, W, 3) uint8 array."""
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)
