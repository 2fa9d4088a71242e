"""Small deterministic depth- and prompt-conditioned denoiser.

The network is an encoder-bottleneck-decoder over (4, h, w) latents with two
self-attention blocks (token grids h/4 x w/4 and h/8 x w/8), one
cross-attention block to prompt tokens, and tanh convolutions throughout.
Depth conditioning enters as an extra input channel holding inverse depth
1/(1+d), which maps the no-hit +inf sentinel to 0.  All weights are seeded
Gaussians; there is no training and no quality claim — the model exists to
exercise the sampling, attention-injection, and blending machinery
deterministically on a CPU.

Every self-attention block can run in one of four modes:

* ``standard`` — plain softmax(QK^T/sqrt(d_k))V over the current tokens.
* ``cross_frame`` — K and V replaced wholesale by a reference stage's.
* ``extended`` — attention over current K,V concatenated with any number of
  reference K,V sets.
* ``dsa`` — keys and values are the reference stage's concatenated with the
  current ones masked to the active object's tokens; masked-out tokens
  contribute zero vectors (so shapes stay static), which leaks a uniform
  attention term exp(0)/Z per masked slot — documented behavior, not a bug.

The module also carries the fixed linear image<->latent codec used when a
pixel image has to be pushed back through the sampler (each 8x8x3 image patch
maps to one 4-channel latent cell through an orthonormal basis).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "AttentionParams",
    "KVRecord",
    "CrossAttnRecord",
    "AttentionMode",
    "ModeError",
    "self_attention",
    "cross_frame_attention",
    "extended_attention",
    "dsa_attention",
    "downsample_mask",
    "inverse_depth_grid",
    "embed_prompt",
    "ToyDenoiser",
    "LatentCodec",
    "PROMPT_DIM",
]

PROMPT_DIM = 32

SELF_ATTN_LAYERS = ("self_attn_4x", "self_attn_8x")
CROSS_ATTN_LAYER = "cross_attn_8x"


class ModeError(ValueError):
    """An attention mode is missing the references it requires."""


def _seed_from(*parts) -> int:
    digest = hashlib.blake2b(":".join(str(p) for p in parts).encode(), digest_size=8)
    return int.from_bytes(digest.digest(), "little")


@dataclass(frozen=True)
class AttentionParams:
    w_q: np.ndarray  # (d, d_k)
    w_k: np.ndarray
    w_v: np.ndarray
    n_heads: int = 1

    def __post_init__(self):
        d_k = self.w_q.shape[1]
        if self.w_k.shape[1] != d_k or self.w_v.shape[1] != d_k:
            raise ValueError("query/key/value output dims differ")
        if d_k % self.n_heads != 0:
            raise ValueError("d_k must divide evenly into heads")


@dataclass(frozen=True)
class KVRecord:
    layer: str
    t: int
    K: np.ndarray  # (N, d_k)
    V: np.ndarray  # (N, d_k)

    def __post_init__(self):
        if self.K.shape[0] != self.V.shape[0]:
            raise ValueError("K and V row counts differ")


@dataclass(frozen=True)
class CrossAttnRecord:
    layer: str
    t: int
    token_index: int
    map: np.ndarray  # (N,) attention mass from each spatial token


@dataclass(frozen=True)
class AttentionMode:
    """Which self-attention variant to run, plus its reference material.

    ``kv_prev`` maps layer id -> KVRecord for cross_frame and dsa;
    ``kv_list`` is a tuple of such maps for extended; ``fg_tokens`` maps
    layer id -> {0,1} token mask for dsa.
    """

    kind: str = "standard"
    kv_prev: dict[str, KVRecord] | None = None
    kv_list: tuple[dict[str, KVRecord], ...] = ()
    fg_tokens: dict[str, np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in ("standard", "cross_frame", "extended", "dsa"):
            raise ModeError(f"unknown attention mode {self.kind!r}")

    def require(self, layer: str) -> None:
        if self.kind in ("cross_frame", "dsa"):
            if self.kv_prev is None or layer not in self.kv_prev:
                raise ModeError(f"mode {self.kind!r} needs a prior KV record for {layer!r}")
        if self.kind == "dsa":
            if self.fg_tokens is None or layer not in self.fg_tokens:
                raise ModeError(f"mode 'dsa' needs a foreground token mask for {layer!r}")
        if self.kind == "extended":
            if not self.kv_list:
                raise ModeError("mode 'extended' needs at least one reference KV set")
            for refs in self.kv_list:
                if layer not in refs:
                    raise ModeError(f"extended reference set lacks layer {layer!r}")


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _attend(q: np.ndarray, k: np.ndarray, v: np.ndarray, n_heads: int) -> np.ndarray:
    """Scaled dot-product attention with contiguous-column head splitting."""
    outs = []
    for qh, kh, vh in zip(
        np.split(q, n_heads, axis=1),
        np.split(k, n_heads, axis=1),
        np.split(v, n_heads, axis=1),
    ):
        weights = _softmax(qh @ kh.T / math.sqrt(qh.shape[1]))
        outs.append(weights @ vh)
    return np.concatenate(outs, axis=1)


def self_attention(f: np.ndarray, params: AttentionParams) -> np.ndarray:
    return _attend(f @ params.w_q, f @ params.w_k, f @ params.w_v, params.n_heads)


def cross_frame_attention(f_cur: np.ndarray, kv_prev: KVRecord,
                          params: AttentionParams) -> np.ndarray:
    """Queries from the current features, keys/values entirely from a
    reference stage."""
    return _attend(f_cur @ params.w_q, kv_prev.K, kv_prev.V, params.n_heads)


def extended_attention(f_cur: np.ndarray, kv_list, params: AttentionParams) -> np.ndarray:
    """Attention over the current K,V concatenated with every listed K,V."""
    if not kv_list:
        raise ModeError("extended attention needs a nonempty reference list")
    k = np.concatenate([f_cur @ params.w_k] + [r.K for r in kv_list])
    v = np.concatenate([f_cur @ params.w_v] + [r.V for r in kv_list])
    return _attend(f_cur @ params.w_q, k, v, params.n_heads)


def dsa_attention(f_cur: np.ndarray, kv_prev: KVRecord, m_fg_tokens: np.ndarray,
                  params: AttentionParams) -> np.ndarray:
    """Keys/values are the reference stage's concatenated with the current
    stage's masked to the foreground tokens (zero vectors where masked out)."""
    m = np.asarray(m_fg_tokens).ravel()
    if m.shape[0] != f_cur.shape[0]:
        raise ValueError(f"mask length {m.shape[0]} != token count {f_cur.shape[0]}")
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("foreground token mask must be binary")
    col = m[:, None].astype(np.float64)
    k_hat = np.concatenate([kv_prev.K, (f_cur @ params.w_k) * col])
    v_hat = np.concatenate([kv_prev.V, (f_cur @ params.w_v) * col])
    return _attend(f_cur @ params.w_q, k_hat, v_hat, params.n_heads)


def downsample_mask(mask: np.ndarray, token_grid: tuple[int, int]) -> np.ndarray:
    """Area-average a binary image mask onto a token grid, thresholding at
    coverage >= 0.5."""
    gh, gw = token_grid
    h, w = mask.shape
    if h % gh or w % gw:
        raise ValueError(f"grid {token_grid} does not divide mask shape {mask.shape}")
    blocks = mask.astype(np.float64).reshape(gh, h // gh, gw, w // gw)
    return (blocks.mean(axis=(1, 3)) >= 0.5).astype(np.uint8)


def inverse_depth_grid(depth_values: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Resize a depth map to a latent grid as block-averaged inverse depth
    1/(1+d); the no-hit +inf sentinel contributes 0."""
    gh, gw = grid
    h, w = depth_values.shape
    if h % gh or w % gw:
        raise ValueError(f"grid {grid} does not divide depth shape {depth_values.shape}")
    with np.errstate(divide="ignore"):
        inv = np.where(np.isfinite(depth_values), 1.0 / (1.0 + depth_values), 0.0)
    return inv.reshape(gh, h // gh, gw, w // gw).mean(axis=(1, 3))


def embed_prompt(text: str) -> np.ndarray:
    """Deterministic per-word embeddings: each whitespace token is hashed to a
    seed and expanded to a fixed Gaussian vector, independent of position."""
    words = text.split()
    if not words:
        raise ValueError("prompt must contain at least one token")
    rows = [
        np.random.default_rng(_seed_from("prompt-token", w)).standard_normal(PROMPT_DIM)
        for w in words
    ]
    return np.stack(rows)


def _conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    """3x3 same-padded convolution; x (C,H,W), w (Cout,Cin,3,3)."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))[:, ::stride, ::stride]
    return np.einsum("chwkl,ockl->ohw", win, w, optimize=True) + b[:, None, None]


def _upsample2(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def _timestep_features(t: int) -> np.ndarray:
    freqs = np.logspace(0.0, 3.0, 16)
    return np.concatenate([np.sin(t / freqs), np.cos(t / freqs)])


class ToyDenoiser:
    """Seeded, training-free noise predictor with injectable attention.

    Weights are fixed at construction from ``seed``; `predict_eps` is a pure
    function of its arguments, so repeated calls are bit-identical and the
    weight tensors can be shared freely across threads.
    """

    LATENT_CHANNELS = 4

    def __init__(self, seed: int = 0, base: int = 32, heads: int = 2):
        self.seed = seed
        self.base = base
        self.heads = heads
        mid = base * 2
        self.mid = mid
        self._w: dict[str, np.ndarray] = {}
        def conv(name, cin, cout):
            rng = np.random.default_rng(_seed_from(seed, name))
            self._w[name + ".w"] = rng.standard_normal((cout, cin, 3, 3)) / math.sqrt(cin * 9)
            self._w[name + ".b"] = np.zeros(cout)
        def dense(name, cin, cout):
            rng = np.random.default_rng(_seed_from(seed, name))
            self._w[name] = rng.standard_normal((cin, cout)) / math.sqrt(cin)
        conv("in", self.LATENT_CHANNELS + 1, base)
        dense("temb", 32, base)
        conv("down1", base, base)
        conv("down2", base, mid)
        for layer in SELF_ATTN_LAYERS:
            dense(layer + ".q", mid, mid)
            dense(layer + ".k", mid, mid)
            dense(layer + ".v", mid, mid)
        conv("down3", mid, mid)
        dense(CROSS_ATTN_LAYER + ".q", mid, mid)
        dense(CROSS_ATTN_LAYER + ".k", PROMPT_DIM, mid)
        dense(CROSS_ATTN_LAYER + ".v", PROMPT_DIM, mid)
        conv("up1", mid, mid)
        conv("up2", mid, base)
        conv("up3", base, base)
        conv("out", base, self.LATENT_CHANNELS)

    # -- attention plumbing ---------------------------------------------------

    def attn_params(self, layer: str) -> AttentionParams:
        return AttentionParams(
            w_q=self._w[layer + ".q"],
            w_k=self._w[layer + ".k"],
            w_v=self._w[layer + ".v"],
            n_heads=self.heads,
        )

    def token_grids(self, h: int, w: int) -> dict[str, tuple[int, int]]:
        return {
            "self_attn_4x": (h // 4, w // 4),
            "self_attn_8x": (h // 8, w // 8),
        }

    def token_masks(self, fg_mask: np.ndarray, latent_shape: tuple[int, int]) -> dict[str, np.ndarray]:
        """Per-attention-layer binary token masks from an image-resolution
        foreground mask."""
        return {
            layer: downsample_mask(fg_mask, grid).ravel()
            for layer, grid in self.token_grids(*latent_shape).items()
        }

    def _run_self_attention(self, layer: str, f: np.ndarray, t: int,
                            mode: AttentionMode) -> tuple[np.ndarray, KVRecord]:
        params = self.attn_params(layer)
        record = KVRecord(layer=layer, t=t, K=f @ params.w_k, V=f @ params.w_v)
        mode.require(layer)
        if mode.kind == "standard":
            out = self_attention(f, params)
        elif mode.kind == "cross_frame":
            out = cross_frame_attention(f, mode.kv_prev[layer], params)
        elif mode.kind == "extended":
            refs = [refs_by_layer[layer] for refs_by_layer in mode.kv_list]
            out = extended_attention(f, refs, params)
        else:
            out = dsa_attention(f, mode.kv_prev[layer], mode.fg_tokens[layer], params)
        return out, record

    # -- forward pass ---------------------------------------------------------

    def predict_eps(
        self,
        x_t: np.ndarray,
        t: int,
        prompt_embedding: np.ndarray,
        depth: np.ndarray,
        mode: AttentionMode = AttentionMode(),
    ) -> tuple[np.ndarray, list[KVRecord], list[CrossAttnRecord]]:
        """Noise prediction plus captured attention state.

        ``depth`` must already be the latent-grid inverse-depth conditioning
        (see :func:`inverse_depth_grid`).
        """
        c, h, w = x_t.shape
        if c != self.LATENT_CHANNELS:
            raise ValueError(f"expected {self.LATENT_CHANNELS} latent channels, got {c}")
        if h % 8 or w % 8:
            raise ValueError("latent grid must be divisible by 8")
        if depth.shape != (h, w):
            raise ValueError(f"conditioning grid {depth.shape} != latent grid {(h, w)}")
        if prompt_embedding.ndim != 2 or prompt_embedding.shape[1] != PROMPT_DIM:
            raise ValueError("prompt embedding must be (n_tokens, PROMPT_DIM)")

        kv_records: list[KVRecord] = []
        cross_records: list[CrossAttnRecord] = []
        wt = self._w

        z = np.concatenate([x_t, depth[None]], axis=0)
        z = np.tanh(_conv2d(z, wt["in.w"], wt["in.b"])
                    + (_timestep_features(t) @ wt["temb"])[:, None, None])
        z = np.tanh(_conv2d(z, wt["down1.w"], wt["down1.b"], stride=2))
        z = np.tanh(_conv2d(z, wt["down2.w"], wt["down2.b"], stride=2))

        f = z.reshape(self.mid, -1).T  # (N, d) token rows
        out, rec = self._run_self_attention("self_attn_4x", f, t, mode)
        kv_records.append(rec)
        z = np.tanh(z + out.T.reshape(z.shape))

        z = np.tanh(_conv2d(z, wt["down3.w"], wt["down3.b"], stride=2))
        f = z.reshape(self.mid, -1).T
        out, rec = self._run_self_attention("self_attn_8x", f, t, mode)
        kv_records.append(rec)
        z = np.tanh(z + out.T.reshape(z.shape))

        # Cross-attention to the prompt tokens (always standard attention).
        f = z.reshape(self.mid, -1).T
        q = f @ wt[CROSS_ATTN_LAYER + ".q"]
        k = prompt_embedding @ wt[CROSS_ATTN_LAYER + ".k"]
        v = prompt_embedding @ wt[CROSS_ATTN_LAYER + ".v"]
        weights = _softmax(q @ k.T / math.sqrt(q.shape[1]))  # (N, n_tokens)
        for j in range(prompt_embedding.shape[0]):
            cross_records.append(
                CrossAttnRecord(layer=CROSS_ATTN_LAYER, t=t, token_index=j,
                                map=weights[:, j].copy())
            )
        z = np.tanh(z + (weights @ v).T.reshape(z.shape))

        z = np.tanh(_conv2d(_upsample2(z), wt["up1.w"], wt["up1.b"]))
        z = np.tanh(_conv2d(_upsample2(z), wt["up2.w"], wt["up2.b"]))
        z = np.tanh(_conv2d(_upsample2(z), wt["up3.w"], wt["up3.b"]))
        eps = _conv2d(z, wt["out.w"], wt["out.b"])
        return eps, kv_records, cross_records

    # -- weight snapshot ------------------------------------------------------

    def export_weights(self) -> tuple[bytes, dict]:
        """Raw little-endian f32 concatenation of all tensors plus a manifest
        mapping layer name -> {shape, offset}; the seed rides along so a
        snapshot can be reproduced from scratch."""
        manifest: dict = {"seed": self.seed, "layers": {}}
        chunks = []
        offset = 0
        for name in sorted(self._w):
            data = np.ascontiguousarray(self._w[name], dtype="<f4").tobytes()
            manifest["layers"][name] = {"shape": list(self._w[name].shape), "offset": offset}
            chunks.append(data)
            offset += len(data)
        return b"".join(chunks), manifest

    def save_weights(self, directory) -> None:
        from pathlib import Path

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        blob, manifest = self.export_weights()
        (d / "weights.f32").write_bytes(blob)
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2))


class LatentCodec:
    """Fixed linear image<->latent map standing in for a learned autoencoder.

    Each 8x8x3 image patch is one latent cell: decode(x) = clip(128 + 96·Dx)
    with D a seeded orthonormal 192x4 basis, encode its transpose.  Because
    D's columns are orthonormal, encode(decode(x)) == x whenever decode stays
    inside [0, 255], and decode(encode(img)) is an orthogonal projection of
    the image's patches — images that came out of the codec survive a
    round trip up to uint8 quantization.
    """

    PATCH = 8
    SCALE = 96.0

    def __init__(self, seed: int = 0, channels: int = 4):
        rng = np.random.default_rng(_seed_from(seed, "latent-codec"))
        a = rng.standard_normal((self.PATCH * self.PATCH * 3, channels))
        q, r = np.linalg.qr(a)
        # Fix the gauge so the basis does not flip sign across library versions.
        self.basis = q * np.sign(np.diag(r))
        self.channels = channels

    def encode(self, image: np.ndarray) -> np.ndarray:
        """(H, W, 3) image in [0, 255] -> (C, H/8, W/8) latent."""
        h, w, _ = image.shape
        p = self.PATCH
        if h % p or w % p:
            raise ValueError(f"image dims must be multiples of {p}")
        patches = image.reshape(h // p, p, w // p, p, 3).transpose(0, 2, 1, 3, 4)
        flat = (patches.reshape(h // p, w // p, -1) - 128.0) / self.SCALE
        return (flat @ self.basis).transpose(2, 0, 1)

    def decode(self, latent: np.ndarray) -> np.ndarray:
        """(C, h, w) latent -> (H, W, 3) float image clipped to [0, 255]."""
        c, gh, gw = latent.shape
        p = self.PATCH
        flat = latent.transpose(1, 2, 0) @ self.basis.T
        patches = flat.reshape(gh, gw, p, p, 3).transpose(0, 2, 1, 3, 4)
        img = 128.0 + self.SCALE * patches.reshape(gh * p, gw * p, 3)
        return np.clip(img, 0.0, 255.0)
