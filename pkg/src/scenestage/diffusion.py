"""Deterministic sampler math: DDIM steps, exact inversion, latent blending,
and AdaIN harmonization.

Latents and noise predictions are plain float64 arrays of shape (C, h, w).
The denoising recursion, for noise schedule ᾱ and step t:

    x̂_0    = (x_t − √(1−ᾱ_t)·ε) / √ᾱ_t
    x_{t−1} = √ᾱ_{t−1}·x̂_0 + √(1−ᾱ_{t−1}−σ_t²)·ε + σ_t·z

With σ_t = 0 the recursion is affine in (x_t, ε) and admits an exact
algebraic inverse, which is what makes trajectory inversion possible.

Blends are computed as ``base + mask·(other − base)`` so that mask == 0
regions keep ``base`` bit-for-bit, and pure mask == 1 regions are forced to
``other`` explicitly; no tolerance is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .render import StageMasks

__all__ = [
    "NoiseSchedule",
    "ScheduleError",
    "linear_schedule",
    "predict_x0",
    "ddim_update",
    "ddim_step",
    "ddim_invert_step",
    "blend_latents",
    "warp_blend",
    "adain",
]

_ADAIN_EPS = 1e-12


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative DDIM schedule.

    ``alphas[t]`` is ᾱ_t for t in [0, T] with the fixed boundary ᾱ_0 = 1;
    ``sigmas[t−1]`` is σ_t for t in [1, T].
    """

    T: int
    alphas: np.ndarray
    sigmas: np.ndarray
    eta: float

    def __post_init__(self):
        if self.T < 1:
            raise ScheduleError("T must be >= 1")
        if self.alphas.shape != (self.T + 1,) or self.sigmas.shape != (self.T,):
            raise ScheduleError("schedule array lengths inconsistent with T")
        if self.alphas[0] != 1.0:
            raise ScheduleError("alpha-bar at t=0 must be exactly 1")
        if not np.all(np.diff(self.alphas) < 0):
            raise ScheduleError("alpha-bar must be strictly decreasing")
        if np.any(self.alphas <= 0) or np.any(self.alphas > 1):
            raise ScheduleError("alpha-bar values must lie in (0, 1]")
        if np.any(self.sigmas < 0):
            raise ScheduleError("sigmas must be nonnegative")
        if self.eta == 0.0 and np.any(self.sigmas != 0.0):
            raise ScheduleError("eta = 0 requires all sigmas exactly zero")

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ScheduleError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alphas[t])

    def sigma(self, t: int) -> float:
        if not 1 <= t <= self.T:
            raise ScheduleError(f"timestep {t} outside [1, {self.T}]")
        return float(self.sigmas[t - 1])


def linear_schedule(T: int, beta_start: float = 8.5e-4, beta_end: float = 1.2e-2,
                    eta: float = 0.0) -> NoiseSchedule:
    """Linearly spaced betas folded into cumulative ᾱ, with DDIM σ for eta."""
    if T < 1:
        raise ScheduleError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError("need 0 < beta_start <= beta_end < 1")
    if not 0.0 <= eta <= 1.0:
        raise ScheduleError("eta must lie in [0, 1]")
    betas = np.linspace(beta_start, beta_end, T)
    alphas = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    if eta == 0.0:
        sigmas = np.zeros(T)
    else:
        a_t, a_prev = alphas[1:], alphas[:-1]
        sigmas = eta * np.sqrt((1 - a_prev) / (1 - a_t)) * np.sqrt(1 - a_t / a_prev)
    return NoiseSchedule(T=T, alphas=alphas, sigmas=sigmas, eta=eta)


def _check_shapes(x: np.ndarray, eps: np.ndarray) -> None:
    if x.shape != eps.shape:
        raise ValueError(f"latent shape {x.shape} != eps shape {eps.shape}")


def predict_x0(x_t: np.ndarray, eps: np.ndarray, alpha_bar_t: float) -> np.ndarray:
    _check_shapes(x_t, eps)
    return (x_t - math.sqrt(1.0 - alpha_bar_t) * eps) / math.sqrt(alpha_bar_t)


def ddim_update(x_t: np.ndarray, eps: np.ndarray, alpha_bar_t: float,
                alpha_bar_prev: float, sigma: float,
                noise_draw: np.ndarray | None = None) -> np.ndarray:
    """One denoising update with explicit scalar coefficients."""
    _check_shapes(x_t, eps)
    if sigma * sigma > 1.0 - alpha_bar_prev:
        raise ScheduleError("sigma^2 exceeds 1 - alpha_bar_prev")
    x0 = predict_x0(x_t, eps, alpha_bar_t)
    out = math.sqrt(alpha_bar_prev) * x0 + math.sqrt(1.0 - alpha_bar_prev - sigma * sigma) * eps
    if sigma > 0.0:
        if noise_draw is None:
            raise ValueError("stochastic step (sigma > 0) requires a noise draw")
        _check_shapes(x_t, noise_draw)
        out = out + sigma * noise_draw
    return out


def ddim_step(x_t: np.ndarray, eps: np.ndarray, t: int, schedule: NoiseSchedule,
              noise_draw: np.ndarray | None = None) -> np.ndarray:
    """x_t -> x_{t-1} for t in [1, T]."""
    return ddim_update(
        x_t, eps, schedule.alpha_bar(t), schedule.alpha_bar(t - 1),
        schedule.sigma(t), noise_draw,
    )


def ddim_invert_step(x_prev: np.ndarray, eps: np.ndarray, t: int,
                     schedule: NoiseSchedule) -> np.ndarray:
    """x_{t-1} -> x_t: the exact algebraic inverse of the eta = 0 step."""
    if schedule.eta != 0.0:
        raise ScheduleError("inversion requires a deterministic (eta = 0) schedule")
    _check_shapes(x_prev, eps)
    a_t = schedule.alpha_bar(t)
    a_prev = schedule.alpha_bar(t - 1)
    scale = math.sqrt(a_t / a_prev)
    return scale * (x_prev - math.sqrt(1.0 - a_prev) * eps) + math.sqrt(1.0 - a_t) * eps


def _masked_mix(base: np.ndarray, other: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if base.shape != other.shape:
        raise ValueError(f"latent shapes differ: {base.shape} vs {other.shape}")
    if mask.shape != base.shape[-2:]:
        raise ValueError(f"mask shape {mask.shape} does not match latent grid {base.shape[-2:]}")
    m = mask.astype(np.float64)
    out = base + m * (other - base)
    return np.where(m == 1.0, other, out)


def blend_latents(x_prev_stage: np.ndarray, x_cur: np.ndarray,
                  masks: StageMasks) -> np.ndarray:
    """Keep background latents from the previous stage, foreground from the
    current one: bg⊙x_prev + fg⊙x_cur, exact on both mask regions."""
    return _masked_mix(x_prev_stage, x_cur, masks.fg)


def warp_blend(x_warp: np.ndarray, x_base: np.ndarray, seg: np.ndarray) -> np.ndarray:
    """seg⊙x_warp + (1−seg)⊙x_base; seg may be soft in [0, 1]."""
    return _masked_mix(x_base, x_warp, seg)


def adain(x: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Renormalize each channel of x to ref's per-channel mean/std
    (population statistics).  Near-constant channels collapse to ref's mean."""
    if x.shape[0] != ref.shape[0]:
        raise ValueError("channel counts differ")
    out = np.empty_like(x, dtype=np.float64)
    for c in range(x.shape[0]):
        mu_x, sd_x = x[c].mean(), x[c].std()
        mu_r, sd_r = ref[c].mean(), ref[c].std()
        if sd_x < _ADAIN_EPS:
            out[c] = mu_r
        else:
            out[c] = (x[c] - mu_x) / sd_x * sd_r + mu_r
    return out
