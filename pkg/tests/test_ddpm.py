import math

import numpy as np
import pytest

from skild.ddpm import (
    KINDS,
    CheatDenoiser,
    DiffusionState,
    ancestral_sample,
    convert_prediction,
    forward_marginal,
    forward_step,
    gaussian_oracle_denoiser,
    generate,
    loss_value,
    posterior,
)
from skild.errors import NumericalError, ValidationError
from skild.schedule import ScheduleSpec, build_tables
from skild.spectral import dct2

from conftest import SMALL_LINEAR, ZeroNormal, within_sigma


class ZeroEps:
    def predict(self, n, field):
        return "epsilon", np.zeros_like(field)


class NanDenoiser:
    def predict(self, n, field):
        return "epsilon", np.full_like(field, np.nan)


def test_forward_marginal_no_noise_limit(grid16, s0_16):
    tab = build_tables(ScheduleSpec("log_linear", -12.0, -11.0), grid16)
    x0 = np.random.default_rng(0).standard_normal(grid16.shape)
    st = forward_marginal(x0, 1, tab, s0_16, np.random.default_rng(1))
    assert st.n == 1
    np.testing.assert_allclose(st.field, x0, atol=1e-5)


def test_forward_marginal_pure_noise_variance(tables16, s0_16):
    rng = np.random.default_rng(3)
    n, reps = 400, 20_000
    x = forward_marginal(np.zeros((reps, 16, 16)), n, tables16, s0_16, rng).field
    expected = tables16.one_minus_alpha_bar(n) * s0_16
    live = expected > 0
    assert np.all(within_sigma(x.var(axis=0)[live], expected[live], reps))
    assert np.all(x[:, ~live] == 0)


def test_forward_marginal_rejects_bad_n(tables16, s0_16, rng):
    with pytest.raises(ValidationError):
        forward_marginal(np.zeros((16, 16)), 0, tables16, s0_16, rng)


def test_forward_step_composition_matches_marginal(s0_16, grid16):
    spec = ScheduleSpec("linear", SMALL_LINEAR.lambda_i, 1.57, theta=5.0, k_c=3.0, N=40)
    tab = build_tables(spec, grid16)
    rng = np.random.default_rng(5)
    reps, n = 10_000, 25
    x0 = np.sqrt(s0_16) * np.random.default_rng(6).standard_normal(grid16.shape)
    x = np.broadcast_to(x0, (reps, 16, 16)).copy()
    for i in range(1, n + 1):
        x = forward_step(x, i, tab, s0_16, rng)
    mean = np.sqrt(tab.alpha_bar(n)) * x0
    var = tab.one_minus_alpha_bar(n) * s0_16
    live = var > 1e-300
    se_mean = np.sqrt(var / reps)
    assert np.all(np.abs(x.mean(axis=0) - mean)[live] <= 5 * se_mean[live])
    assert np.all(within_sigma(x.var(axis=0)[live], var[live], reps))


def test_forward_step_edge_cases(grid16, s0_16):
    tab = build_tables(ScheduleSpec("log_linear", -40.0, -39.0, N=10), grid16)
    x = np.random.default_rng(0).standard_normal(grid16.shape)
    np.testing.assert_array_equal(forward_step(x, 3, tab, s0_16, np.random.default_rng(1)), x)
    rng = np.random.default_rng(2)
    y = forward_step(np.zeros((20_000, 16, 16)), 700, build_tables(SMALL_LINEAR, grid16), s0_16, rng)
    expected = build_tables(SMALL_LINEAR, grid16).beta(700) * s0_16
    live = expected > 0
    assert np.all(within_sigma(y.var(axis=0)[live], expected[live], 20_000))


def test_covariance_preserved_every_n(tables16, s0_16):
    rng = np.random.default_rng(11)
    reps = 10_000
    x0 = np.sqrt(s0_16) * rng.standard_normal((reps, 16, 16))
    for n in (1, 250, 500, 1000):
        xn = forward_marginal(x0, n, tables16, s0_16, rng).field
        assert np.all(within_sigma(xn.var(axis=0), s0_16, reps))


def test_posterior_n1_and_noise_free(tables16, s0_16, rng):
    x0 = rng.standard_normal((16, 16))
    xn = rng.standard_normal((16, 16))
    mean, var = posterior(xn, x0, 1, tables16, s0_16)
    np.testing.assert_allclose(mean, x0, atol=1e-12)
    assert np.all(var == 0)
    for n in (2, 300, 999):
        xf = np.sqrt(tables16.alpha_bar(n)) * x0
        mean, _ = posterior(xf, x0, n, tables16, s0_16)
        np.testing.assert_allclose(mean, np.sqrt(tables16.alpha_bar(n - 1)) * x0, atol=1e-12)


def test_posterior_moment_identity(tables16, s0_16):
    rng = np.random.default_rng(17)
    reps, n = 10_000, 600
    x0 = np.sqrt(s0_16) * rng.standard_normal(s0_16.shape)
    xn = forward_marginal(np.broadcast_to(x0, (reps, 16, 16)), n, tables16, s0_16, rng).field
    mean, var = posterior(xn, x0, n, tables16, s0_16)
    target_mean = np.sqrt(tables16.alpha_bar(n - 1)) * x0
    target_var = tables16.one_minus_alpha_bar(n - 1) * s0_16
    live = target_var > 0
    # mean of posterior means is the forward mean at n-1
    sd_mean = mean.std(axis=0)
    ok = np.abs(mean.mean(axis=0) - target_mean) <= 5 * sd_mean / math.sqrt(reps) + 1e-12
    assert np.all(ok)
    # law of total variance
    total = mean.var(axis=0) + var
    assert np.all(within_sigma(total[live], target_var[live], reps))


def test_conversions_consistent(tables16, s0_16):
    rng = np.random.default_rng(23)
    for n in (1, 10, 500, 1000):
        a = np.sqrt(tables16.alpha_bar(n))
        b = np.sqrt(tables16.one_minus_alpha_bar(n))
        x0 = np.sqrt(s0_16) * rng.standard_normal(s0_16.shape)
        eps = rng.standard_normal(s0_16.shape)
        z = np.sqrt(s0_16) * eps
        xn = a * x0 + b * z
        w = a * z - b * x0
        truth = {"epsilon": eps, "x0": x0, "w_velocity": w, "v_velocity": w / np.sqrt(s0_16)}
        ok_modes = (a > 1e-3) & (b > 1e-6)
        for kind in KINDS:
            got = convert_prediction(kind, truth[kind], n, xn, tables16, s0_16)
            for other in KINDS:
                np.testing.assert_allclose(got[other][ok_modes], truth[other][ok_modes], atol=1e-10, rtol=1e-8)


def test_conversion_round_trip_eps_w_eps(tables16, s0_16, rng):
    eps = rng.standard_normal(s0_16.shape)
    xn = rng.standard_normal(s0_16.shape)
    n = 300
    w = convert_prediction("epsilon", eps, n, xn, tables16, s0_16)["w_velocity"]
    back = convert_prediction("w_velocity", w, n, xn, tables16, s0_16)["epsilon"]
    ok = np.sqrt(tables16.alpha_bar(n)) > 1e-3
    np.testing.assert_allclose(back[ok], eps[ok], atol=1e-12)


def test_conversion_zero_eps_and_floor(tables16, s0_16, rng):
    xn = rng.standard_normal(s0_16.shape)
    n = 1000
    a = np.sqrt(tables16.alpha_bar(n))
    b = np.sqrt(tables16.one_minus_alpha_bar(n))
    out = convert_prediction("epsilon", np.zeros_like(xn), n, xn, tables16, s0_16)
    np.testing.assert_allclose(out["x0"], xn / np.maximum(a, 1e-3))
    np.testing.assert_allclose(out["w_velocity"], -b * out["x0"])
    assert out["floored"].all()
    assert not convert_prediction("epsilon", xn, 1, xn, tables16, s0_16)["floored"].any()
    mid = convert_prediction("epsilon", xn, 800, xn, tables16, s0_16)["floored"]
    assert np.array_equal(mid, np.sqrt(tables16.alpha_bar(800)) < 1e-3) and 0 < mid.sum() < mid.size
    with pytest.raises(ValidationError):
        convert_prediction("score", xn, n, xn, tables16, s0_16)


@pytest.mark.parametrize("n0", [1, 500, 1000])
def test_cheat_reconstruction(tables16, s0_16, n0):
    rng = np.random.default_rng(n0)
    x0 = np.sqrt(s0_16) * rng.standard_normal((4, 16, 16))
    start = forward_marginal(x0, n0, tables16, s0_16, rng)
    out = ancestral_sample(start, CheatDenoiser(x0), tables16, s0_16, rng)
    assert np.abs(out - x0).max() <= 1e-8


def test_single_posterior_step(tables16, s0_16, rng):
    x0 = rng.standard_normal((16, 16))
    st = forward_marginal(x0, 300, tables16, s0_16, rng)
    out = ancestral_sample(st, CheatDenoiser(x0), tables16, s0_16, ZeroNormal(), stop_n=299)
    mean, _ = posterior(st.field, x0, 300, tables16, s0_16)
    np.testing.assert_allclose(out, mean, atol=1e-10)


def test_ancestral_validation(tables16, s0_16):
    with pytest.raises(ValidationError):
        ancestral_sample(DiffusionState(3, np.zeros((16, 16))), ZeroEps(), tables16, s0_16, ZeroNormal(), stop_n=3)
    with pytest.raises(NumericalError, match="timestep 5"):
        ancestral_sample(DiffusionState(5, np.zeros((16, 16))), NanDenoiser(), tables16, s0_16, ZeroNormal())


def test_generate_edge_cases(tables16, s0_16, rng):
    x0 = rng.standard_normal((16, 16))
    np.testing.assert_allclose(generate(CheatDenoiser(x0), tables16, s0_16, rng), x0, atol=1e-8)
    zero = np.zeros((16, 16))
    assert not np.any(generate(gaussian_oracle_denoiser(zero, tables16), tables16, zero, rng))
    assert generate(CheatDenoiser(x0), tables16, s0_16, rng, batch=(3,)).shape == (3, 16, 16)


def test_gaussian_oracle_properties(tables16, s0_16, rng):
    den = gaussian_oracle_denoiser(s0_16, tables16)
    x = rng.standard_normal((16, 16))
    quiet = build_tables(ScheduleSpec("log_linear", -14.0, -13.0), tables16.grid)
    assert np.abs(gaussian_oracle_denoiser(s0_16, quiet).predict(1, x)[1]).max() < 1e-4
    for n in (5, 400, 1000):
        kind, eps = den.predict(n, x)
        x0_hat = convert_prediction(kind, eps, n, x, tables16, s0_16)["x0"]
        ok = np.sqrt(tables16.alpha_bar(n)) > 1e-3
        np.testing.assert_allclose(x0_hat[ok], (np.sqrt(tables16.alpha_bar(n)) * x)[ok], atol=1e-10)
    s0 = s0_16.copy()
    s0[2, 2] = 0
    assert gaussian_oracle_denoiser(s0, tables16).predict(10, x)[1][2, 2] == 0


def test_loss_values(tables16, s0_16):
    rng = np.random.default_rng(31)
    x0 = np.sqrt(s0_16) * rng.standard_normal((16, 16))
    assert loss_value(CheatDenoiser(x0), x0, 700, s0_16, tables16, rng) <= 1e-12
    n = 500
    losses = [loss_value(ZeroEps(), np.sqrt(s0_16) * rng.standard_normal((64, 16, 16)), n, s0_16, tables16, rng) for _ in range(20)]
    assert np.mean(losses) == pytest.approx(1.0, abs=0.02)
    # Gaussian oracle: expected loss alpha_bar_n per live mode
    den = gaussian_oracle_denoiser(s0_16, tables16)
    live = tables16.one_minus_alpha_bar(n) > 0
    expected = tables16.alpha_bar(n)[live].mean()
    vals = [loss_value(den, np.sqrt(s0_16) * rng.standard_normal((64, 16, 16)), n, s0_16, tables16, rng) for _ in range(40)]
    assert np.mean(vals) == pytest.approx(expected, abs=0.02)


def test_reproducible_with_seed(tables16, s0_16):
    den = gaussian_oracle_denoiser(s0_16, tables16)
    a = generate(den, tables16, s0_16, np.random.default_rng(9), batch=(2,))
    b = generate(den, tables16, s0_16, np.random.default_rng(9), batch=(2,))
    assert np.array_equal(a, b)


def test_pixel_field_round_trip_through_sampler(tables16, s0_16, rng):
    img = rng.uniform(-1, 1, (16, 16))
    x0 = dct2(img)
    st = forward_marginal(x0, 1000, tables16, s0_16, rng)
    assert np.abs(ancestral_sample(st, CheatDenoiser(x0), tables16, s0_16, rng) - x0).max() <= 1e-8
