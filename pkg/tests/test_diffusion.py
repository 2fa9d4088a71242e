import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenestage.diffusion import (
    NoiseSchedule,
    ScheduleError,
    adain,
    blend_latents,
    ddim_invert_step,
    ddim_step,
    ddim_update,
    linear_schedule,
    predict_x0,
    warp_blend,
)
from scenestage.render import StageMasks


def lat(values):
    return np.asarray(values, dtype=np.float64).reshape(1, 1, -1)


# --- schedules ----------------------------------------------------------------


def test_single_step_schedule():
    sched = linear_schedule(1, beta_start=0.1, beta_end=0.1)
    assert sched.alphas[0] == 1.0
    assert sched.alphas[1] == pytest.approx(0.9, abs=1e-15)


def test_eta_zero_means_exactly_zero_sigma():
    sched = linear_schedule(20)
    assert np.all(sched.sigmas == 0.0)


def test_default_schedule_strictly_decreasing():
    sched = linear_schedule(20)
    assert np.all(np.diff(sched.alphas) < 0)
    ref = np.cumprod(1.0 - np.linspace(8.5e-4, 1.2e-2, 20))
    np.testing.assert_allclose(sched.alphas[1:], ref, rtol=1e-15)


def test_eta_one_sigmas_positive_and_admissible():
    sched = linear_schedule(10, eta=1.0)
    assert np.all(sched.sigmas[1:] > 0)
    assert sched.sigmas[0] == 0.0  # alpha_bar_0 = 1 forces sigma_1 = 0
    for t in range(1, 11):
        assert sched.sigma(t) ** 2 <= 1 - sched.alpha_bar(t - 1) + 1e-15


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(T=0),
        dict(T=5, beta_start=0.0),
        dict(T=5, beta_start=0.5, beta_end=0.2),
        dict(T=5, beta_end=1.0),
        dict(T=5, eta=2.0),
    ],
)
def test_bad_schedule_rejected(kwargs):
    with pytest.raises(ScheduleError):
        linear_schedule(**kwargs)


def test_schedule_invariants_enforced():
    with pytest.raises(ScheduleError):
        NoiseSchedule(T=1, alphas=np.array([0.9, 0.5]), sigmas=np.zeros(1), eta=0.0)
    with pytest.raises(ScheduleError):
        NoiseSchedule(T=1, alphas=np.array([1.0, 0.5]), sigmas=np.array([0.1]), eta=0.0)


# --- ddim step ----------------------------------------------------------------


def test_degenerate_coefficients_identity():
    x = np.random.default_rng(0).standard_normal((2, 3, 3))
    eps = np.random.default_rng(1).standard_normal((2, 3, 3))
    out = ddim_update(x, eps, alpha_bar_t=1.0, alpha_bar_prev=1.0, sigma=0.0)
    np.testing.assert_array_equal(out, x)


def test_scalar_step_example():
    x0 = predict_x0(lat([1.0]), lat([0.5]), 0.25)
    assert x0[0, 0, 0] == pytest.approx(1.1339746, abs=1e-7)
    out = ddim_update(lat([1.0]), lat([0.5]), 0.25, 0.64, 0.0)
    assert out[0, 0, 0] == pytest.approx(1.2071797, abs=1e-7)


def test_zero_eps_collapses_to_scaling():
    sched = linear_schedule(5)
    x = np.random.default_rng(2).standard_normal((4, 2, 2))
    out = ddim_step(x, np.zeros_like(x), 3, sched)
    ratio = np.sqrt(sched.alpha_bar(2) / sched.alpha_bar(3))
    np.testing.assert_allclose(out, ratio * x, rtol=1e-15)


def test_step_shape_mismatch():
    sched = linear_schedule(5)
    with pytest.raises(ValueError):
        ddim_step(np.zeros((1, 2, 2)), np.zeros((1, 3, 3)), 1, sched)


def test_stochastic_step_needs_noise():
    sched = linear_schedule(5, eta=1.0)
    x = np.zeros((1, 2, 2))
    with pytest.raises(ValueError):
        ddim_step(x, x, 5, sched)
    out = ddim_step(x, x, 5, sched, noise_draw=np.ones_like(x))
    assert np.all(out == sched.sigma(5))


def test_inadmissible_sigma_rejected():
    with pytest.raises(ScheduleError):
        ddim_update(lat([1.0]), lat([0.0]), 0.5, 0.9, sigma=0.5)


def test_step_linear_in_inputs():
    sched = linear_schedule(8)
    rng = np.random.default_rng(3)
    x1, x2, e1, e2 = (rng.standard_normal((2, 4, 4)) for _ in range(4))
    a, b = 0.7, -1.3
    combined = ddim_step(a * x1 + b * x2, a * e1 + b * e2, 4, sched)
    separate = a * ddim_step(x1, e1, 4, sched) + b * ddim_step(x2, e2, 4, sched)
    np.testing.assert_allclose(combined, separate, rtol=1e-12, atol=1e-12)


# --- inversion ----------------------------------------------------------------


def test_invert_undoes_step():
    sched = linear_schedule(20)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((4, 8, 8))
    eps = rng.standard_normal((4, 8, 8))
    for t in (1, 7, 20):
        back = ddim_invert_step(ddim_step(x, eps, t, sched), eps, t, sched)
        np.testing.assert_allclose(back, x, rtol=1e-10)


def test_invert_scalar_example():
    sched_free = ddim_update(lat([1.0]), lat([0.5]), 0.25, 0.64, 0.0)
    # Manual inverse with the same coefficients recovers exactly 1.0.
    a_t, a_prev = 0.25, 0.64
    x_t = np.sqrt(a_t / a_prev) * (sched_free - np.sqrt(1 - a_prev) * lat([0.5])) \
        + np.sqrt(1 - a_t) * lat([0.5])
    assert x_t[0, 0, 0] == pytest.approx(1.0, abs=1e-12)


def test_invert_requires_deterministic_schedule():
    sched = linear_schedule(5, eta=0.5)
    x = np.zeros((1, 2, 2))
    with pytest.raises(ScheduleError):
        ddim_invert_step(x, x, 3, sched)


def test_full_round_trip_fixed_eps():
    sched = linear_schedule(20)
    rng = np.random.default_rng(5)
    x0 = rng.standard_normal((4, 8, 8))
    eps_seq = [rng.standard_normal((4, 8, 8)) for _ in range(20)]
    x = x0
    for t in range(1, 21):
        x = ddim_invert_step(x, eps_seq[t - 1], t, sched)
    for t in range(20, 0, -1):
        x = ddim_step(x, eps_seq[t - 1], t, sched)
    assert np.max(np.abs(x - x0)) / np.max(np.abs(x0)) < 1e-6


# --- blending -----------------------------------------------------------------


def masks_from_fg(fg):
    fg = fg.astype(np.uint8)
    return StageMasks(fg=fg, bg=(1 - fg).astype(np.uint8))


def test_blend_all_fg_returns_current():
    rng = np.random.default_rng(6)
    a, b = rng.standard_normal((2, 4, 4)), rng.standard_normal((2, 4, 4))
    out = blend_latents(a, b, masks_from_fg(np.ones((4, 4))))
    np.testing.assert_array_equal(out, b)


def test_blend_all_bg_returns_previous():
    rng = np.random.default_rng(7)
    a, b = rng.standard_normal((2, 4, 4)), rng.standard_normal((2, 4, 4))
    out = blend_latents(a, b, masks_from_fg(np.zeros((4, 4))))
    np.testing.assert_array_equal(out, a)


def test_blend_half_and_half():
    fg = np.zeros((4, 4))
    fg[:, 2:] = 1
    out = blend_latents(np.full((1, 4, 4), 2.0), np.full((1, 4, 4), 6.0), masks_from_fg(fg))
    assert np.all(out[0, :, :2] == 2.0) and np.all(out[0, :, 2:] == 6.0)


def test_blend_mixed_mask_is_bit_exact_per_region():
    rng = np.random.default_rng(8)
    a, b = rng.standard_normal((3, 8, 8)), rng.standard_normal((3, 8, 8))
    fg = (rng.random((8, 8)) < 0.5)
    out = blend_latents(a, b, masks_from_fg(fg))
    np.testing.assert_array_equal(out[:, fg], b[:, fg])
    np.testing.assert_array_equal(out[:, ~fg], a[:, ~fg])


def test_warp_blend_extremes_and_idempotence():
    rng = np.random.default_rng(9)
    w, base = rng.standard_normal((2, 4, 4)), rng.standard_normal((2, 4, 4))
    seg = rng.random((4, 4))
    np.testing.assert_array_equal(warp_blend(w, base, np.ones((4, 4))), w)
    np.testing.assert_array_equal(warp_blend(w, base, np.zeros((4, 4))), base)
    np.testing.assert_array_equal(warp_blend(w, w, seg), w)


def test_warp_blend_soft_region_interpolates():
    out = warp_blend(np.full((1, 2, 2), 10.0), np.full((1, 2, 2), 0.0), np.full((2, 2), 0.25))
    np.testing.assert_allclose(out, 2.5)


# --- adain --------------------------------------------------------------------


def test_adain_identity():
    x = np.random.default_rng(10).standard_normal((3, 6, 6))
    np.testing.assert_allclose(adain(x, x), x, atol=1e-9)


def test_adain_example():
    out = adain(lat([0.0, 1.0, 2.0]), lat([3.0, 7.0]))  # ref mu=5, sigma=2
    np.testing.assert_allclose(out.ravel(), [2.5505103, 5.0, 7.4494897], atol=1e-6)


def test_adain_constant_channel_guard():
    out = adain(np.full((1, 3, 3), 4.0), lat([3.0, 7.0]))
    np.testing.assert_array_equal(out, np.full((1, 3, 3), 5.0))


@settings(max_examples=25)
@given(seed=st.integers(0, 10_000))
def test_adain_matches_ref_statistics(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 5, 5)) * rng.uniform(0.5, 3) + rng.uniform(-2, 2)
    ref = rng.standard_normal((2, 7, 4)) * rng.uniform(0.5, 3) + rng.uniform(-2, 2)
    out = adain(x, ref)
    for c in range(2):
        assert abs(out[c].mean() - ref[c].mean()) < 1e-7
        assert abs(out[c].std() - ref[c].std()) < 1e-7
