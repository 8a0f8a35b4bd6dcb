"""
Power spectra and the compression-error model of the 3-D FFT

Every compression error is modelled as independent U[-eb_m, eb_m]; summed into one
unnormalised DFT coefficient the real (and imaginary) part of the error is close to
normal with variance eb_m**2 / 6 per cell.
"""

import math
from typing import Optional, Sequence, Union

from loguru import logger
import numpy as np

from adaptive_eb_module.models import Field3D, FftErrorPrediction, SpectrumResult, SpectrumVerdict

SINGLE_CELL_SIGMA = math.sqrt(1.0 / 6.0)


def _values(field: Union[Field3D, np.ndarray]) -> np.ndarray:
    return field.values if isinstance(field, Field3D) else np.asarray(field)


def _check_power_of_two(shape) -> None:
    for n in shape:
        if n < 1 or n & (n - 1):
            raise ValueError(f"FFT dims must be powers of two, got {tuple(shape)}")


def fft3(field: Union[Field3D, np.ndarray]) -> np.ndarray:
    """Unnormalised forward 3-D DFT in double precision"""
    values = _values(field)
    if values.ndim != 3:
        raise ValueError(f"fft3 expects a 3-D grid, got shape {values.shape}")
    _check_power_of_two(values.shape)
    return np.fft.fftn(values.astype(np.float64))


def wavenumber_magnitude(shape) -> np.ndarray:
    """|k| on the full FFT grid, signed integer frequencies in [-N/2, N/2)"""
    kx, ky, kz = (np.fft.fftfreq(n) * n for n in shape)
    return np.sqrt(kx[:, None, None] ** 2 + ky[None, :, None] ** 2 + kz[None, None, :] ** 2)


def power_spectrum(field: Union[Field3D, np.ndarray], bin_width: float = 1.0) -> SpectrumResult:
    """
    Radially binned power spectrum

    Parameters
    ----------
    field : Field3D or np.ndarray
        Grid with power-of-two dims
    bin_width : float
        Width of the |k| bins; bin b holds modes with rint(|k| / bin_width) == b

    Returns
    -------
    SpectrumResult
        Non-empty bins only; P is the mean of |X|^2 / (N^3)^2 over the bin's modes
    """
    if bin_width <= 0:
        raise ValueError(f"bin_width must be positive, got {bin_width}")
    X = fft3(field)
    n_cells = X.size
    power = (np.abs(X) ** 2).ravel() / float(n_cells) ** 2
    bins = np.rint(wavenumber_magnitude(X.shape).ravel() / bin_width).astype(np.int64)
    counts = np.bincount(bins)
    sums = np.bincount(bins, weights=power)
    present = np.flatnonzero(counts)
    return SpectrumResult(
        k_bins=present,
        k_centers=present * bin_width,
        P=sums[present] / counts[present],
        mode_counts=counts[present],
    )


def fft_sigma_for_cells(
    ebs: Sequence[float],
    n_cells: int,
    cell_counts: Optional[Sequence[int]] = None,
    moment: str = "mean",
) -> float:
    """
    sigma of one coefficient error component for a field of ``n_cells`` cells

    ``moment="mean"`` gives sqrt(n_cells / 6) * mean(eb); ``"rms"`` uses the root mean
    square of the bounds, which is exact under the uniform-error model when the bounds
    differ widely. Means are cell-weighted when ``cell_counts`` is given.
    """
    ebs = np.asarray(ebs, dtype=np.float64)
    if ebs.size == 0 or np.any(ebs <= 0):
        raise ValueError("error bounds must be positive and non-empty")
    weights = None if cell_counts is None else np.asarray(cell_counts, dtype=np.float64)
    if moment == "mean":
        level = np.average(ebs, weights=weights)
    elif moment == "rms":
        level = math.sqrt(np.average(ebs**2, weights=weights))
    else:
        raise ValueError(f"Unsupported moment: {moment}, please use 'mean' or 'rms'")
    return math.sqrt(n_cells / 6.0) * float(level)


def predict_fft_sigma(
    ebs: Sequence[float],
    N: Union[int, Sequence[int]],
    M: Optional[int] = None,
    cell_counts: Optional[Sequence[int]] = None,
    moment: str = "mean",
) -> FftErrorPrediction:
    """
    Predicted spread of the unnormalised FFT coefficient error

    Parameters
    ----------
    ebs : Sequence[float]
        Per-partition error bounds
    N : int or three ints
        Edge length of a cubic field, or its dims
    M : int, optional
        Partition count; must equal len(ebs) when given
    cell_counts : Sequence[int], optional
        Cells per partition, for unequal partitions
    moment : str
        ``mean`` (sqrt(N^3/6) * mean(eb)) or ``rms``

    Returns
    -------
    FftErrorPrediction
        sigma_3d and mu = 0

    Examples
    --------
    >>> round(predict_fft_sigma([1.0], 64).sigma_3d, 2)
    209.02
    """
    if M is not None and M != len(ebs):
        raise ValueError(f"M = {M} does not match {len(ebs)} error bounds")
    n_cells = int(N) ** 3 if np.isscalar(N) else int(np.prod(N))
    return FftErrorPrediction(sigma_3d=fft_sigma_for_cells(ebs, n_cells, cell_counts, moment))


def eb_budget_from_sigma(target_sigma: float, N: Union[int, Sequence[int]]) -> float:
    """Mean error bound that predict_fft_sigma maps to ``target_sigma``"""
    if target_sigma <= 0:
        raise ValueError(f"target_sigma must be positive, got {target_sigma}")
    n_cells = int(N) ** 3 if np.isscalar(N) else int(np.prod(N))
    return target_sigma / math.sqrt(n_cells / 6.0)


def perturbation_to_sigma(rel_power: float, P_ref: float, N: Union[int, Sequence[int]]) -> float:
    """
    Heuristic sigma for a tolerated relative power perturbation at a reference mode

    A coefficient error of size sigma moves |X|^2 / (N^3)^2 by about
    2 * sigma * sqrt(P_ref) / N^3 relative to P_ref, so
    sigma = rel_power * N^3 * sqrt(P_ref) / 2.
    """
    if rel_power <= 0 or P_ref <= 0:
        raise ValueError("rel_power and P_ref must be positive")
    n_cells = int(N) ** 3 if np.isscalar(N) else int(np.prod(N))
    return rel_power * n_cells * math.sqrt(P_ref) / 2.0


def measured_fft_sigma(orig: Union[Field3D, np.ndarray], recon: Union[Field3D, np.ndarray]) -> float:
    """Standard deviation of Re(X' - X) over all modes"""
    delta = _values(recon).astype(np.float64) - _values(orig).astype(np.float64)
    return float(fft3(delta).real.std())


def verify_spectrum(
    orig: Union[Field3D, np.ndarray],
    recon: Union[Field3D, np.ndarray],
    k_cut: Optional[float] = None,
    tol: float = 0.01,
    bin_width: float = 1.0,
) -> SpectrumVerdict:
    """
    Compare the reconstructed power spectrum with the original

    Bins with 0 < k_center < k_cut are checked; the verdict passes when every checked
    ratio P'(k) / P(k) lies in [1 - tol, 1 + tol]. The k = 0 bin carries only the mean and
    is reported but not checked. Bins with zero original power are skipped with a warning.

    Parameters
    ----------
    orig, recon : Field3D or np.ndarray
        Grids with equal power-of-two dims
    k_cut : float, optional
        Upper wavenumber of the checked range (default N / 8, N the smallest dim)
    tol : float
        Relative tolerance, >= 0
    bin_width : float
        Radial bin width

    Returns
    -------
    SpectrumVerdict
        Verdict plus the full ratio curve
    """
    a, b = _values(orig), _values(recon)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if tol < 0:
        raise ValueError(f"tol must be non-negative, got {tol}")
    if k_cut is None:
        k_cut = min(a.shape) / 8.0

    p_orig = power_spectrum(a, bin_width)
    p_recon = power_spectrum(b, bin_width)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(p_orig.P > 0, p_recon.P / p_orig.P, np.nan)

    checked = (p_orig.k_centers > 0) & (p_orig.k_centers < k_cut)
    skipped = [int(k) for k in p_orig.k_bins[checked & ~(p_orig.P > 0)]]
    if skipped:
        logger.warning(f"Skipping spectrum bins with zero original power: {skipped}")
    usable = checked & (p_orig.P > 0)
    passed = bool(np.all(np.abs(ratio[usable] - 1.0) <= tol))

    verdict = SpectrumVerdict(
        passed=passed,
        k_centers=p_orig.k_centers,
        P_orig=p_orig.P,
        P_recon=p_recon.P,
        ratio=ratio,
        mode_counts=p_orig.mode_counts,
        k_cut=float(k_cut),
        tol=float(tol),
        skipped_bins=skipped,
    )
    logger.debug(
        f"Spectrum check over {int(usable.sum())} bins: max deviation "
        f"{verdict.max_deviation:.4%} (tol {tol:.2%}) -> {'PASS' if passed else 'FAIL'}"
    )
    return verdict
