"""
Error-bound planning: per-partition bounds that minimise the predicted bitrate
under an FFT (mean error bound) budget, a halo fault-mass budget, or both
"""

import math
from typing import List, Optional, Sequence

from loguru import logger
import numpy as np
from scipy.optimize import bisect

from adaptive_eb_module.errors import InfeasiblePlanError
from adaptive_eb_module.features import global_mean
from adaptive_eb_module.halos import predict_fault
from adaptive_eb_module.modeling.predict import count_extrapolated, estimate_C, predict_bitrate
from adaptive_eb_module.models import CompressionPlan, PartitionFeatures, RateModel
from adaptive_eb_module.spectrum import fft_sigma_for_cells

CLAMP_FACTOR = 4.0
MAX_RESCALE_ITERATIONS = 20
HALO_BUDGET_RTOL = 1e-3


def _weights(features: Sequence[PartitionFeatures]) -> np.ndarray:
    cells = np.array([f.cell_count for f in features], dtype=np.float64)
    return cells / cells.sum()


def _rate_coefficients(
    features: Sequence[PartitionFeatures], model: RateModel, C: Optional[Sequence[float]]
) -> np.ndarray:
    if C is not None:
        C = np.asarray(C, dtype=np.float64)
        if len(C) != len(features):
            raise ValueError(f"{len(C)} rate coefficients for {len(features)} partitions")
        return C
    keys = np.array([f.key(model.key_feature) for f in features])
    return np.atleast_1d(estimate_C(keys, model))


def objective(ebs: Sequence[float], C: Sequence[float], weights: Sequence[float], c: float) -> float:
    """Predicted dataset bitrate sum(w_m * C_m * eb_m**c)"""
    ebs = np.asarray(ebs, dtype=np.float64)
    return float(np.dot(weights, np.asarray(C) * ebs**c))


def _finish_plan(
    ebs: np.ndarray,
    eb_avg: float,
    strategy: str,
    features: Sequence[PartitionFeatures],
    model: RateModel,
    C: np.ndarray,
    t_boundary: float,
) -> CompressionPlan:
    lo, hi = eb_avg / CLAMP_FACTOR, eb_avg * CLAMP_FACTOR
    clamp_events = int(
        np.count_nonzero(np.isclose(ebs, lo, rtol=1e-12) | np.isclose(ebs, hi, rtol=1e-12))
    )
    bitrates = np.atleast_1d(predict_bitrate(C, ebs, model))
    weights = _weights(features)
    n_cells = sum(f.cell_count for f in features)
    return CompressionPlan(
        ebs=ebs,
        eb_avg=eb_avg,
        predicted_bitrate=float(np.dot(weights, bitrates)),
        predicted_sigma3d=fft_sigma_for_cells(ebs, n_cells),
        predicted_mass_fault=predict_fault(features, ebs, t_boundary).mass_fault,
        clamp_events=clamp_events,
        strategy=strategy,
        C=C,
        bitrates=bitrates,
        extrapolated=count_extrapolated(bitrates, model),
    )


def plan_uniform(
    eb: float,
    M: int,
    features: Optional[Sequence[PartitionFeatures]] = None,
    model: Optional[RateModel] = None,
    C: Optional[Sequence[float]] = None,
    t_boundary: float = 88.16,
) -> CompressionPlan:
    """
    The same error bound for every partition

    Predictions are filled in when ``features`` and ``model`` are given, otherwise they
    are NaN.
    """
    if eb <= 0:
        raise ValueError(f"eb must be positive, got {eb}")
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    ebs = np.full(M, float(eb))
    if features is None or model is None:
        nan = float("nan")
        return CompressionPlan(
            ebs=ebs,
            eb_avg=float(eb),
            predicted_bitrate=nan,
            predicted_sigma3d=nan,
            predicted_mass_fault=nan,
            clamp_events=0,
            strategy="uniform",
        )
    if len(features) != M:
        raise ValueError(f"M = {M} but {len(features)} partitions have features")
    Cv = _rate_coefficients(features, model, C)
    return _finish_plan(ebs, float(eb), "uniform", features, model, Cv, t_boundary)


def raw_error_bounds(C, C_a: float, eb_avg: float, c: float, form: str = "kkt") -> np.ndarray:
    """Unclamped bounds relative to the reference coefficient C_a"""
    ratio = np.asarray(C, dtype=np.float64) / C_a
    if form == "kkt":
        return eb_avg * ratio ** (1.0 / (1.0 - c))
    if form == "literal":
        return eb_avg * ratio ** (1.0 / c)
    raise ValueError(f"Unsupported form: {form}, please use 'kkt' or 'literal'")


def _rescale_to_mean(raw: np.ndarray, eb_avg: float) -> np.ndarray:
    """
    Find kappa with mean(clip(kappa * raw, lo, hi)) == eb_avg

    Clamp and rescale are repeated until the clamped set stops changing.
    """
    weights = np.full(len(raw), 1.0 / len(raw))
    lo, hi = eb_avg / CLAMP_FACTOR, eb_avg * CLAMP_FACTOR
    kappa = eb_avg / float(np.dot(weights, raw))
    for _ in range(MAX_RESCALE_ITERATIONS):
        ebs = np.clip(kappa * raw, lo, hi)
        free = (kappa * raw > lo) & (kappa * raw < hi)
        if not free.any():
            break
        fixed_share = float(np.dot(weights[~free], ebs[~free]))
        new_kappa = (eb_avg - fixed_share) / float(np.dot(weights[free], raw[free]))
        new_free = (new_kappa * raw > lo) & (new_kappa * raw < hi)
        kappa = new_kappa
        if np.array_equal(new_free, free):
            break
    else:
        logger.debug("Clamp/rescale loop hit the iteration cap; refining by bisection")

    def excess(log_k: float) -> float:
        return float(np.dot(weights, np.clip(math.exp(log_k) * raw, lo, hi))) - eb_avg

    ebs = np.clip(kappa * raw, lo, hi)
    if abs(float(np.dot(weights, ebs)) - eb_avg) > 1e-12 * eb_avg:
        a = math.log(lo / raw.max())
        b = math.log(hi / raw.min())
        kappa = math.exp(bisect(excess, a, b, xtol=1e-14, maxiter=500))
        ebs = np.clip(kappa * raw, lo, hi)
    mean = float(np.dot(weights, ebs))
    if mean > eb_avg:
        # trim rounding so the budget holds
        ebs = np.clip(ebs * (eb_avg / mean), lo, hi)
    return ebs


def plan_fft(
    features: Sequence[PartitionFeatures],
    model: RateModel,
    eb_avg: float,
    C: Optional[Sequence[float]] = None,
    t_boundary: float = 88.16,
    known_mean: Optional[float] = None,
    form: str = "kkt",
) -> CompressionPlan:
    """
    Minimise the predicted bitrate with the mean error bound fixed at ``eb_avg``

    The objective is the cell-weighted bitrate sum(w_m * C_m * eb_m**c); the budget is
    the plain mean of eb_m over partitions, the quantity the FFT error sigma depends on.
    Raw bounds are taken relative to C_a = C(overall mean of the key feature):

    - ``form="kkt"`` (default): eb_m = eb_avg * (M * w_m * C_m / C_a) ** (1 / (1 - c)),
      the point where every partition has the same weighted marginal bit cost
      w_m * |d b / d eb| (M * w_m == 1 for equal partitions);
    - ``form="literal"``: eb_m = eb_avg * (C_m / C_a) ** (1 / c).

    Bounds are then clamped to [eb_avg / 4, 4 * eb_avg] and the unclamped ones rescaled
    until the mean equals eb_avg.

    Parameters
    ----------
    features : Sequence[PartitionFeatures]
        One entry per partition
    model : RateModel
        Calibrated model, c < 0
    eb_avg : float
        Mean error bound budget, > 0
    C : Sequence[float], optional
        Measured rate coefficients (measure mode); estimated from the key feature otherwise
    t_boundary : float
        Halo threshold used for the fault-mass prediction in the plan
    known_mean : float, optional
        Overall mean of the key feature fixed by the simulation
    form : str
        ``kkt`` or ``literal``

    Returns
    -------
    CompressionPlan
        strategy ``fft``
    """
    if eb_avg <= 0:
        raise ValueError(f"eb_avg must be positive, got {eb_avg}")
    if model.c >= 0:
        raise ValueError(f"rate model exponent must be negative, got {model.c}")
    if not features:
        raise ValueError("plan_fft needs at least one partition")
    Cv = _rate_coefficients(features, model, C)
    weights = _weights(features)

    if C is None:
        if model.key_feature == "mean":
            key_mean = global_mean(list(features), known_mean)
        else:
            key_mean = math.fsum(w * f.key(model.key_feature) for w, f in zip(weights, features))
        C_a = estimate_C(key_mean, model)
    else:
        C_a = float(np.exp(np.dot(weights, np.log(Cv))))

    share = weights * len(features) if form == "kkt" else 1.0
    raw = raw_error_bounds(Cv * share, C_a, eb_avg, model.c, form)

    ebs = _rescale_to_mean(raw, eb_avg)
    if float(ebs.mean()) > eb_avg * (1 + 1e-9):
        raise InfeasiblePlanError(f"mean error bound cannot be held at {eb_avg}")
    plan = _finish_plan(ebs, eb_avg, "fft", features, model, Cv, t_boundary)
    logger.debug(
        f"plan_fft: eb range [{ebs.min():.4g}, {ebs.max():.4g}], "
        f"{plan.clamp_events} clamped, predicted bitrate {plan.predicted_bitrate:.4f}"
    )
    return plan


def plan_halo(
    features: Sequence[PartitionFeatures],
    model: RateModel,
    mass_fault_budget: float,
    t_boundary: float = 88.16,
    eb_avg: Optional[float] = None,
    C: Optional[Sequence[float]] = None,
) -> CompressionPlan:
    """
    Minimise the predicted bitrate subject to a halo fault-mass budget

    Stationarity of the Lagrangian gives
    eb_m = (lambda * t_boundary * n_m / (4 * (-c) * w_m * C_m)) ** (1 / (c - 1));
    lambda is bisected in log space until t_boundary * sum(n_m * eb_m) / 4 binds the
    budget within 0.1%. Partitions without boundary cells get the upper clamp.

    Parameters
    ----------
    features : Sequence[PartitionFeatures]
        One entry per partition, at least one with n_ref > 0
    model : RateModel
        Calibrated model, c < 0
    mass_fault_budget : float
        Allowed predicted fault mass, > 0
    t_boundary : float
        Halo candidate threshold
    eb_avg : float, optional
        Centre of the clamp range; defaults to the uniform bound that exactly meets the budget
    C : Sequence[float], optional
        Measured rate coefficients

    Returns
    -------
    CompressionPlan
        strategy ``halo``

    Raises
    ------
    InfeasiblePlanError
        The budget is exceeded even with every partition at the lower clamp
    """
    if mass_fault_budget is None or mass_fault_budget <= 0:
        raise ValueError(f"mass_fault_budget must be positive, got {mass_fault_budget}")
    if model.c >= 0:
        raise ValueError(f"rate model exponent must be negative, got {model.c}")
    n = np.array([f.n_ref for f in features], dtype=np.float64)
    if not np.any(n > 0):
        raise ValueError("plan_halo needs at least one partition with boundary cells")
    Cv = _rate_coefficients(features, model, C)
    weights = _weights(features)
    c = model.c

    if eb_avg is None:
        eb_avg = 4.0 * mass_fault_budget / (t_boundary * n.sum())
    lo, hi = eb_avg / CLAMP_FACTOR, eb_avg * CLAMP_FACTOR

    def fault(ebs: np.ndarray) -> float:
        return t_boundary * float(np.dot(n, ebs)) / 4.0

    active = n > 0

    def bounds_for(log_lam: float) -> np.ndarray:
        ebs = np.full(len(features), hi)
        base = math.exp(log_lam) * t_boundary * n[active] / (4.0 * -c * weights[active] * Cv[active])
        ebs[active] = np.clip(base ** (1.0 / (c - 1.0)), lo, hi)
        return ebs

    if fault(np.full(len(features), lo)) > mass_fault_budget:
        raise InfeasiblePlanError(
            f"fault mass {fault(np.full(len(features), lo)):.6g} at the lower clamp "
            f"exceeds the budget {mass_fault_budget:.6g}"
        )
    if fault(np.full(len(features), hi)) <= mass_fault_budget:
        ebs = np.full(len(features), hi)
    else:
        # lambda at which each partition reaches the upper / lower clamp
        lam_hi_clamp = 4.0 * -c * weights[active] * Cv[active] * hi ** (c - 1.0) / (t_boundary * n[active])
        lam_lo_clamp = 4.0 * -c * weights[active] * Cv[active] * lo ** (c - 1.0) / (t_boundary * n[active])
        a = math.log(lam_hi_clamp.min()) - 1.0
        b = math.log(lam_lo_clamp.max()) + 1.0
        target = mass_fault_budget * (1.0 - HALO_BUDGET_RTOL / 2.0)
        if fault(bounds_for(b)) >= target:
            ebs = bounds_for(b)
        else:
            log_lam = bisect(lambda x: fault(bounds_for(x)) - target, a, b, xtol=1e-12, maxiter=500)
            ebs = bounds_for(log_lam)
            if fault(ebs) > mass_fault_budget:
                ebs = bounds_for(log_lam + 1e-9)

    plan = _finish_plan(ebs, eb_avg, "halo", features, model, Cv, t_boundary)
    logger.debug(
        f"plan_halo: fault {plan.predicted_mass_fault:.6g} / budget {mass_fault_budget:.6g}, "
        f"{plan.clamp_events} clamped"
    )
    return plan


def plan_combined(
    features: Sequence[PartitionFeatures],
    model: RateModel,
    eb_avg: float,
    mass_fault_budget: float,
    t_boundary: float = 88.16,
    C: Optional[Sequence[float]] = None,
    known_mean: Optional[float] = None,
) -> CompressionPlan:
    """
    FFT plan first; when its predicted fault mass breaks the halo budget, take the
    per-partition minimum with the halo plan built on the same clamp range
    """
    if mass_fault_budget <= 0:
        raise ValueError(f"mass_fault_budget must be positive, got {mass_fault_budget}")
    fft = plan_fft(features, model, eb_avg, C=C, t_boundary=t_boundary, known_mean=known_mean)
    if fft.predicted_mass_fault <= mass_fault_budget:
        logger.debug("Halo budget is not binding; keeping the FFT plan")
        return fft
    halo = plan_halo(features, model, mass_fault_budget, t_boundary, eb_avg=eb_avg, C=fft.C)
    ebs = np.minimum(fft.ebs, halo.ebs)
    return _finish_plan(ebs, eb_avg, "combined", features, model, fft.C, t_boundary)


def bit_quality_ratios(plan: CompressionPlan, C: Sequence[float], model: RateModel) -> np.ndarray:
    """Marginal bit cost |d b / d eb| = |c| * C_m * eb_m**(c - 1) at the planned bounds"""
    return abs(model.c) * np.asarray(C, dtype=np.float64) * plan.ebs ** (model.c - 1.0)


def build_plan(
    strategy: str,
    features: List[PartitionFeatures],
    model: RateModel,
    eb_avg: float,
    mass_fault_budget: Optional[float] = None,
    t_boundary: float = 88.16,
    C: Optional[Sequence[float]] = None,
    known_mean: Optional[float] = None,
) -> CompressionPlan:
    """Dispatch on a strategy tag (uniform | fft | halo | combined)"""
    if strategy == "uniform":
        return plan_uniform(eb_avg, len(features), features, model, C, t_boundary)
    if strategy == "fft":
        return plan_fft(features, model, eb_avg, C, t_boundary, known_mean)
    if strategy == "halo":
        return plan_halo(features, model, mass_fault_budget, t_boundary, eb_avg, C)
    if strategy == "combined":
        return plan_combined(features, model, eb_avg, mass_fault_budget, t_boundary, C, known_mean)
    raise ValueError(f"Unsupported strategy: {strategy}")

