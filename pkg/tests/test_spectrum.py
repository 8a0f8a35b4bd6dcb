import math

import numpy as np
import pytest
from scipy import stats

from adaptive_eb_module.spectrum import (
    eb_budget_from_sigma,
    fft3,
    fft_sigma_for_cells,
    measured_fft_sigma,
    perturbation_to_sigma,
    power_spectrum,
    predict_fft_sigma,
    verify_spectrum,
)


def test_fft3_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        fft3(np.zeros((8, 8, 6)))
    with pytest.raises(ValueError):
        fft3(np.zeros((8, 8)))


def test_single_mode_lands_in_its_bin():
    n = 32
    i = np.arange(n)
    grid = np.cos(2 * np.pi * 3 * i / n)[:, None, None] * np.ones((n, n, n))
    spectrum = power_spectrum(grid)
    nonzero = spectrum.k_bins[spectrum.P > 1e-20]
    assert list(nonzero) == [3]
    # two modes at +-3 out of the bin's modes, each |X|^2 / N^6 = 1/4
    bin3 = int(np.flatnonzero(spectrum.k_bins == 3)[0])
    assert spectrum.P[bin3] * spectrum.mode_counts[bin3] == pytest.approx(0.5)


def test_mode_counts_cover_the_grid():
    spectrum = power_spectrum(np.zeros((16, 16, 16)))
    assert spectrum.mode_counts.sum() == 16**3
    assert spectrum.k_bins[0] == 0 and spectrum.mode_counts[0] == 1


def test_bin_width_must_be_positive():
    with pytest.raises(ValueError):
        power_spectrum(np.zeros((8, 8, 8)), bin_width=0.0)


def test_identical_fields_pass_even_at_zero_tolerance(density_32):
    verdict = verify_spectrum(density_32, density_32, tol=0.0)
    assert verdict.passed
    assert verdict.max_deviation == 0.0
    assert verdict.k_cut == 4.0


def test_scaled_reconstruction_fails(density_32):
    verdict = verify_spectrum(density_32, density_32.values * 1.1)
    assert not verdict.passed
    assert verdict.max_deviation == pytest.approx(0.21, rel=1e-5)


def test_mean_offset_is_not_checked(smooth_32):
    orig = smooth_32.values.astype(np.float64) + 1.0
    verdict = verify_spectrum(orig, orig + 5.0, tol=1e-9)
    assert verdict.passed
    assert verdict.ratio[0] > 1.0


def test_constant_field_passes():
    constant = np.full((16, 16, 16), 3.0)
    assert verify_spectrum(constant, constant.copy(), tol=0.01).passed


def test_zero_power_bins_are_skipped():
    zeros = np.zeros((16, 16, 16))
    verdict = verify_spectrum(zeros, zeros.copy(), tol=0.0)
    assert verdict.passed
    assert verdict.skipped_bins == [1]


def test_shape_mismatch_and_negative_tol(smooth_32):
    with pytest.raises(ValueError):
        verify_spectrum(smooth_32, smooth_32.values[:16, :16, :16])
    with pytest.raises(ValueError):
        verify_spectrum(smooth_32, smooth_32, tol=-0.1)


def test_sigma_prediction_formula():
    assert predict_fft_sigma([1.0], 64).sigma_3d == pytest.approx(math.sqrt(64**3 / 6))
    assert predict_fft_sigma([0.5, 1.5], 32, M=2).sigma_3d == pytest.approx(math.sqrt(32**3 / 6))
    with pytest.raises(ValueError):
        predict_fft_sigma([0.5, 1.5], 32, M=3)


def test_rms_moment_and_cell_weights():
    assert fft_sigma_for_cells([1.0, 3.0], 600, moment="rms") == pytest.approx(10 * math.sqrt(5))
    assert fft_sigma_for_cells([1.0, 3.0], 600, cell_counts=[3, 1]) == pytest.approx(15.0)
    with pytest.raises(ValueError):
        fft_sigma_for_cells([1.0], 600, moment="median")
    with pytest.raises(ValueError):
        fft_sigma_for_cells([0.0, 1.0], 600)


def test_budget_inverts_prediction():
    eb = eb_budget_from_sigma(50.0, (32, 32, 32))
    assert predict_fft_sigma([eb], 32).sigma_3d == pytest.approx(50.0)
    with pytest.raises(ValueError):
        eb_budget_from_sigma(0.0, 32)


def test_perturbation_to_sigma():
    assert perturbation_to_sigma(0.01, 4.0, 8) == pytest.approx(0.01 * 512 * 2.0 / 2.0)
    with pytest.raises(ValueError):
        perturbation_to_sigma(0.0, 1.0, 8)


def test_uniform_noise_matches_predicted_sigma(rng):
    n = 32
    eb = 0.3
    orig = rng.standard_normal((n, n, n))
    recon = orig + rng.uniform(-eb, eb, size=orig.shape)
    predicted = predict_fft_sigma([eb], n).sigma_3d
    assert measured_fft_sigma(orig, recon) == pytest.approx(predicted, rel=0.05)


def test_sigma_prediction_ignores_the_order_of_bounds(rng):
    ebs = rng.uniform(0.1, 2.0, 64)
    sigma = predict_fft_sigma(ebs, 64).sigma_3d
    for _ in range(5):
        assert predict_fft_sigma(rng.permutation(ebs), 64).sigma_3d == pytest.approx(sigma, rel=1e-12)
    assert sigma == pytest.approx(math.sqrt(64**3 / 6) * ebs.mean(), rel=1e-12)


def test_white_noise_spectrum_is_flat():
    n, seeds = 16, 20
    total = None
    for seed in range(seeds):
        result = power_spectrum(np.random.default_rng(seed).standard_normal((n, n, n)))
        total = result.P if total is None else total + result.P
    mean_power = total / seeds
    expected = 1.0 / n**3
    standard_error = expected * np.sqrt(2.0 / (result.mode_counts * seeds))
    assert np.all(np.abs(mean_power - expected) <= 4.0 * standard_error)


def test_coefficient_errors_are_normal(rng):
    n, eb = 32, 0.5
    noise = rng.uniform(-eb, eb, size=(n, n, n))
    sigma = predict_fft_sigma([eb], n).sigma_3d
    # kz in (0, n/2): no self-conjugate modes and no conjugate pairs
    z = fft3(noise)[:, :, 1 : n // 2].real.ravel() / sigma
    assert stats.kstest(z, "norm").pvalue > 1e-3
    coverage = np.mean(np.abs(z) <= 2.0)
    assert coverage >= 0.93
