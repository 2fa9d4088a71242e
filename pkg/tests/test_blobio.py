import json

import numpy as np
import pytest

from scenestage.blobio import (
    BlobFormatError,
    decode_f32_blob,
    encode_f32_blob,
    image_to_png_bytes,
    png_bytes_to_image,
    to_uint8_image,
)


def test_blob_round_trip_3d():
    rng = np.random.default_rng(0)
    arr = rng.standard_normal((5, 7, 3)).astype(np.float32)
    assert np.array_equal(decode_f32_blob(encode_f32_blob(arr)), arr)


def test_blob_round_trip_2d_gains_channel_axis():
    arr = np.arange(12, dtype=np.float32).reshape(3, 4)
    out = decode_f32_blob(encode_f32_blob(arr))
    assert out.shape == (3, 4, 1)
    assert np.array_equal(out[:, :, 0], arr)


def test_blob_header_is_first_line_json():
    data = encode_f32_blob(np.zeros((2, 3, 1), dtype=np.float32))
    header = json.loads(data.split(b"\n", 1)[0])
    assert header == {"w": 3, "h": 2, "c": 1, "dtype": "f32"}


def test_blob_infinity_survives():
    arr = np.array([[[np.inf], [1.0]]], dtype=np.float32)
    out = decode_f32_blob(encode_f32_blob(arr))
    assert np.isinf(out[0, 0, 0]) and out[0, 1, 0] == 1.0


def test_blob_rejects_truncated_payload():
    data = encode_f32_blob(np.zeros((4, 4, 2), dtype=np.float32))
    with pytest.raises(BlobFormatError):
        decode_f32_blob(data[:-3])


def test_blob_rejects_bad_header():
    with pytest.raises(BlobFormatError):
        decode_f32_blob(b"no newline here")
    with pytest.raises(BlobFormatError):
        decode_f32_blob(b'{"w":1,"h":1,"c":1,"dtype":"f64"}\n' + b"\x00" * 8)
    with pytest.raises(BlobFormatError):
        decode_f32_blob(b'{"w":-1,"h":1,"c":1,"dtype":"f32"}\n')


def test_png_round_trip():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    assert np.array_equal(png_bytes_to_image(image_to_png_bytes(img)), img)


def test_to_uint8_rounds_half_up_and_clips():
    arr = np.array([[[-3.0, 0.4, 127.5], [127.49, 255.0, 300.0]]])
    out = to_uint8_image(arr)
    assert out.tolist() == [[[0, 0, 128], [127, 255, 255]]]
