"""
Adaptive Error-Bound Compression Pipeline

This module ties the stages into reproducible runs:
1. Load or synthesize the field, partition it and extract per-partition features
2. Load or calibrate the rate model
3. Plan per-partition error bounds (plus the uniform baseline at the same mean bound)
4. Compress both plans, decompress the adaptive archive from disk
5. Verify the power spectrum (and halos for baryon density) and write the report bundle
"""

from contextlib import contextmanager
from dataclasses import dataclass, field as dataclass_field
import math
from pathlib import Path
import time
from typing import Dict, List, Optional, Tuple

from loguru import logger
import numpy as np

from adaptive_eb_module.archive import cmd_compress, cmd_decompress
from adaptive_eb_module.codec import error_histogram
from adaptive_eb_module.config import REPORTS_DIR
from adaptive_eb_module.dataset import SynthesisSpec, field_from_config, generate_synthetic, load_field, partition_field
from adaptive_eb_module.errors import CalibrationError, StageFailure
from adaptive_eb_module.export import (
    write_bit_quality_csv,
    write_catalog_csv,
    write_comparison_csv,
    write_effective_cells_csv,
    write_error_histogram_csv,
    write_features_csv,
    write_plan_csv,
    write_spectrum_csv,
    write_table_csv,
)
from adaptive_eb_module.features import extract_features
from adaptive_eb_module.halos import candidacy_change, compare_catalogs, find_halos, predict_fault
from adaptive_eb_module.modeling.train import calibrate, load_rate_model, measure_C, save_rate_model
from adaptive_eb_module.models import (
    CatalogComparison,
    CompressionPlan,
    Field3D,
    PartitionFeatures,
    PartitionSet,
    PipelineConfig,
    RateModel,
    SpectrumVerdict,
)
from adaptive_eb_module.processing import bit_quality_ratios, build_plan, plan_uniform
from adaptive_eb_module.spectrum import (
    eb_budget_from_sigma,
    fft_sigma_for_cells,
    measured_fft_sigma,
    verify_spectrum,
)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_STAGE = 2
EXIT_ARGS = 3

FLIP_VARIANCE = 3.0 / 16.0  # Per boundary cell, flip probability 1/4


@dataclass
class VerificationResult:
    """Checks run on one reconstruction"""

    tag: str
    spectrum: SpectrumVerdict
    halo_comparison: Optional[CatalogComparison] = None
    halo_passed: bool = True
    fault_cells_predicted: float = float("nan")
    fault_cells_measured: int = 0
    candidate_change: int = 0
    sigma_predicted: float = float("nan")
    sigma_predicted_rms: float = float("nan")
    sigma_measured: float = float("nan")

    @property
    def passed(self) -> bool:
        return self.spectrum.passed and self.halo_passed


@dataclass
class PipelineReport:
    """Outcome of a pipeline run"""

    exit_code: int
    output_dir: Path
    failed_stage: Optional[str] = None
    plan: Optional[CompressionPlan] = None
    uniform_plan: Optional[CompressionPlan] = None
    adaptive_ratio: float = float("nan")
    uniform_ratio: float = float("nan")
    adaptive: Optional[VerificationResult] = None
    uniform: Optional[VerificationResult] = None
    timings: Dict[str, float] = dataclass_field(default_factory=dict)
    snapshots: List[Dict[str, object]] = dataclass_field(default_factory=list)

    @property
    def improvement(self) -> float:
        """Relative compression-ratio gain of the adaptive plan over the uniform baseline"""
        return self.adaptive_ratio / self.uniform_ratio - 1.0


@contextmanager
def _stage(number: int, name: str, timings: Dict[str, float]):
    logger.info("=" * 80)
    logger.info(f"Step {number}: {name}")
    logger.info("=" * 80)
    start = time.perf_counter()
    try:
        yield
    except StageFailure:
        raise
    except Exception as e:
        raise StageFailure(name, f"{type(e).__name__}: {e}") from e
    finally:
        timings[name] = time.perf_counter() - start


def resolve_eb_avg(config: PipelineConfig, dims) -> float:
    """Mean error bound from eb_avg, or back-solved from target_sigma"""
    if config.eb_avg is not None:
        return float(config.eb_avg)
    return eb_budget_from_sigma(config.target_sigma, dims)


def obtain_rate_model(
    config: PipelineConfig,
    pset: PartitionSet,
    field: Field3D,
    features: List[PartitionFeatures],
) -> Optional[RateModel]:
    """
    Load the configured rate model or calibrate one on the field

    Returns None when the field cannot be calibrated (for example a constant field whose
    bitrate does not depend on the error bound); callers then plan uniformly.
    """
    if config.rate_model_path:
        model = load_rate_model(Path(config.rate_model_path))
        logger.info(f"Loaded rate model from {config.rate_model_path} (c = {model.c:.4f})")
        return model
    try:
        return calibrate(
            pset,
            field,
            config.calibration_ebs,
            config.calibration_stride,
            features=features,
            key_feature=config.key_feature,
            workers=config.workers,
        )
    except CalibrationError as e:
        logger.warning(f"Rate model calibration failed ({e}); falling back to a uniform plan")
        return None


def make_plan(
    config: PipelineConfig,
    features: List[PartitionFeatures],
    model: Optional[RateModel],
    eb_avg: float,
    C: Optional[np.ndarray] = None,
) -> CompressionPlan:
    """Plan with the configured strategy; uniform when no rate model is available"""
    if model is None:
        return plan_uniform(eb_avg, len(features))
    return build_plan(
        config.resolved_strategy(),
        features,
        model,
        eb_avg,
        config.mass_fault_budget,
        config.t_boundary,
        C=C,
        known_mean=config.fixed_global_mean,
    )


def eb_map(pset: PartitionSet, ebs) -> np.ndarray:
    """Per-cell error bound grid of a plan"""
    out = np.empty(pset.field_dims, dtype=np.float64)
    for block, eb in zip(pset.blocks, ebs):
        out[block.slices] = eb
    return out


def check_halos(
    orig: Field3D,
    recon: Field3D,
    config: PipelineConfig,
    features: List[PartitionFeatures],
    ebs,
) -> Tuple[bool, CatalogComparison, float, int, int]:
    """
    Halo catalog comparison and the candidacy-flip check

    With a mass-fault budget the check passes when the measured flip count stays within
    the budget plus three binomial standard deviations; without a budget it is reported
    only.
    """
    t_b, t_h = config.t_boundary, config.resolved_t_halo()
    orig_catalog = find_halos(orig, t_b, t_h, config.connectivity)
    recon_catalog = find_halos(recon, t_b, t_h, config.connectivity)
    comparison = compare_catalogs(
        orig_catalog, recon_catalog, config.match_radius, config.min_halo_cells
    )
    flips, signed = candidacy_change(orig, recon, t_b)
    prediction = predict_fault(features, ebs, t_b)
    predicted_cells = float(prediction.e_m_list.sum())

    passed = True
    if config.mass_fault_budget is not None:
        n_bc = 4.0 * predicted_cells
        allowed = config.mass_fault_budget / t_b + 3.0 * math.sqrt(FLIP_VARIANCE * n_bc)
        passed = flips <= allowed
        if not passed:
            logger.warning(f"Halo check: {flips} flipped cells exceed the allowed {allowed:.1f}")
    logger.info(
        f"Halos: {len(orig_catalog)} -> {len(recon_catalog)}, matched {len(comparison.matched)}, "
        f"flipped cells {flips} (predicted {predicted_cells:.1f})"
    )
    return passed, comparison, predicted_cells, flips, signed


def verify_reconstruction(
    orig: Field3D,
    recon: Field3D,
    pset: PartitionSet,
    plan: CompressionPlan,
    features: List[PartitionFeatures],
    config: PipelineConfig,
    output_dir: Optional[Path] = None,
    tag: str = "adaptive",
) -> VerificationResult:
    """
    Spectrum check (always) and halo check (baryon density) of a reconstruction

    When ``output_dir`` is given the spectrum ratio curve, error histogram and halo
    tables are written there with ``tag`` in their names.
    """
    verdict = verify_spectrum(orig, recon, config.k_cut, config.tol)
    logger.info(
        f"[{tag}] spectrum {'PASS' if verdict.passed else 'FAIL'} "
        f"(max deviation {verdict.max_deviation:.4%}, tol {config.tol:.2%})"
    )
    cell_counts = pset.cell_counts()
    result = VerificationResult(
        tag=tag,
        spectrum=verdict,
        sigma_predicted=fft_sigma_for_cells(plan.ebs, orig.cell_count),
        sigma_predicted_rms=fft_sigma_for_cells(plan.ebs, orig.cell_count, cell_counts, "rms"),
        sigma_measured=measured_fft_sigma(orig, recon),
    )

    if orig.name == "baryon_density":
        passed, comparison, predicted, flips, signed = check_halos(
            orig, recon, config, features, plan.ebs
        )
        result.halo_passed = passed
        result.halo_comparison = comparison
        result.fault_cells_predicted = predicted
        result.fault_cells_measured = flips
        result.candidate_change = signed

    if output_dir is not None:
        write_spectrum_csv(verdict, output_dir / f"spectrum_{tag}.csv")
        normalized = (recon.values.astype(np.float64) - orig.values) / eb_map(pset, plan.ebs)
        counts, edges = error_histogram(np.zeros_like(normalized), normalized, 1.0)
        write_error_histogram_csv(counts, edges, output_dir / f"error_histogram_{tag}.csv")
        if result.halo_comparison is not None:
            write_comparison_csv(result.halo_comparison, output_dir / f"halo_comparison_{tag}.csv")
    return result


def _ratio_row(name: str, plan: CompressionPlan, measured_bitrate: float) -> Dict[str, object]:
    return {
        "strategy": name,
        "eb_avg": plan.eb_avg,
        "mean_eb": float(np.mean(plan.ebs)),
        "predicted_bitrate": plan.predicted_bitrate,
        "predicted_ratio": plan.predicted_ratio,
        "measured_bitrate": measured_bitrate,
        "measured_ratio": 32.0 / measured_bitrate,
    }


def _write_reports(report: PipelineReport, config: PipelineConfig) -> None:
    out = report.output_dir
    uniform_err = report.uniform.halo_comparison.mass_error_rmse if report.uniform.halo_comparison else float("nan")
    adaptive_err = report.adaptive.halo_comparison.mass_error_rmse if report.adaptive.halo_comparison else float("nan")
    write_table_csv(
        [
            _ratio_row(report.plan.strategy, report.plan, 32.0 / report.adaptive_ratio),
            _ratio_row("uniform", report.uniform_plan, 32.0 / report.uniform_ratio),
        ],
        out / "ratio_comparison.csv",
        {
            "improvement": report.improvement,
            "halo_mass_error_improvement": (uniform_err - adaptive_err) / uniform_err
            if uniform_err and np.isfinite(uniform_err)
            else float("nan"),
        },
    )
    write_table_csv(
        [
            {
                "plan": r.tag,
                "predicted_sigma": r.sigma_predicted,
                "predicted_sigma_rms": r.sigma_predicted_rms,
                "measured_sigma": r.sigma_measured,
                "relative_error": r.sigma_measured / r.sigma_predicted - 1.0,
            }
            for r in (report.adaptive, report.uniform)
        ],
        out / "sigma_comparison.csv",
    )
    if report.adaptive.halo_comparison is not None:
        write_table_csv(
            [
                {
                    "plan": r.tag,
                    "predicted_fault_cells": r.fault_cells_predicted,
                    "measured_fault_cells": r.fault_cells_measured,
                    "candidate_change": r.candidate_change,
                    "predicted_mass_fault": config.t_boundary * r.fault_cells_predicted,
                    "measured_mass_fault": config.t_boundary * r.fault_cells_measured,
                }
                for r in (report.adaptive, report.uniform)
            ],
            out / "fault_cells.csv",
        )
    write_table_csv(
        [{"stage": k, "seconds": v} for k, v in report.timings.items()],
        out / "timing.csv",
    )


def _snapshot_field(token: str, config: PipelineConfig) -> Field3D:
    """A snapshot is a field path, or an integer evolution step of the synthetic field"""
    if token.strip().isdigit():
        spec = SynthesisSpec.heterogeneous(config.role, config.synth_dims).evolved(int(token))
        return generate_synthetic(spec, config.seed)
    return load_field(Path(token), expected_role=config.role)


def run_snapshots(
    config: PipelineConfig, model: Optional[RateModel], eb_avg: float
) -> List[Dict[str, object]]:
    """
    Static vs adaptive planning over a sequence of snapshots

    The static plan is computed once on the first snapshot and reused; the adaptive plan
    is recomputed for every snapshot. The rate model is shared by all snapshots.
    """
    rows = []
    static_plan: Optional[CompressionPlan] = None
    for token in config.snapshots:
        field = _snapshot_field(token, config)
        pset = partition_field(field, config.block_dims)
        features = extract_features(
            pset, field, config.t_boundary, with_entropy=config.key_feature == "entropy"
        )
        adaptive = make_plan(config, features, model, eb_avg)
        if static_plan is None:
            static_plan = adaptive
        if static_plan.M != pset.M:
            raise ValueError(f"snapshot {token} has {pset.M} partitions, the first had {static_plan.M}")
        uniform = plan_uniform(eb_avg, pset.M)

        ratios = {}
        for name, plan in (("uniform", uniform), ("static", static_plan), ("adaptive", adaptive)):
            archive = cmd_compress(field, pset, plan, workers=config.workers)
            ratios[name] = archive.ratio
            if name == "adaptive":
                recon = cmd_decompress(archive, config.workers)
                verdict = verify_spectrum(field, recon, config.k_cut, config.tol)
        rows.append(
            {
                "snapshot": token,
                "uniform_ratio": ratios["uniform"],
                "static_ratio": ratios["static"],
                "adaptive_ratio": ratios["adaptive"],
                "static_gain": ratios["static"] / ratios["uniform"] - 1.0,
                "adaptive_gain": ratios["adaptive"] / ratios["uniform"] - 1.0,
                "adaptive_spectrum": "PASS" if verdict.passed else "FAIL",
            }
        )
        logger.info(
            f"Snapshot {token}: uniform {ratios['uniform']:.2f}, static {ratios['static']:.2f}, "
            f"adaptive {ratios['adaptive']:.2f}"
        )
    return rows


def cmd_pipeline(config: PipelineConfig) -> PipelineReport:
    """
    Run extract -> calibrate -> plan -> compress -> decompress -> verify -> report

    Parameters
    ----------
    config : PipelineConfig
        Validated configuration

    Returns
    -------
    PipelineReport
        ``exit_code`` is 0 when every check on the adaptive reconstruction passes, 1 when
        a check fails and 2 when a stage raised (``failed_stage`` names it)
    """
    output_dir = Path(config.output_dir) if config.output_dir else REPORTS_DIR / "pipeline"
    report = PipelineReport(exit_code=EXIT_STAGE, output_dir=output_dir)
    timings = report.timings

    try:
        with _stage(1, "extract", timings):
            output_dir.mkdir(parents=True, exist_ok=True)
            field = field_from_config(config.field_path, config.role, config.synth_dims, config.seed)
            pset = partition_field(field, config.block_dims)
            features = extract_features(
                pset,
                field,
                config.t_boundary,
                with_entropy=config.key_feature == "entropy",
                workers=config.workers,
            )
            write_features_csv(features, output_dir / "features.csv")
            write_effective_cells_csv(features, output_dir / "effective_cells.csv")
            logger.info(f"Field {field.name} {field.dims}: {pset.M} partitions")

        with _stage(2, "calibrate", timings):
            model = obtain_rate_model(config, pset, field, features)
            if model is not None and not config.rate_model_path:
                save_rate_model(model, output_dir / "rate_model.json")

        with _stage(3, "plan", timings):
            eb_avg = resolve_eb_avg(config, field.dims)
            C = None
            if model is not None and config.rate_mode == "measure":
                C = measure_C(pset, field, model, workers=config.workers)
            plan = make_plan(config, features, model, eb_avg, C)
            uniform = (
                plan_uniform(eb_avg, pset.M, features, model, C, config.t_boundary)
                if model is not None
                else plan_uniform(eb_avg, pset.M)
            )
            write_plan_csv(plan, output_dir / "plan.csv")
            write_plan_csv(uniform, output_dir / "plan_uniform.csv")
            if model is not None:
                write_bit_quality_csv(plan, bit_quality_ratios(plan, plan.C, model), output_dir / "bit_quality.csv")
            report.plan, report.uniform_plan = plan, uniform
            logger.info(
                f"Plan ({plan.strategy}): eb_avg {eb_avg:.6g}, predicted ratio "
                f"{plan.predicted_ratio:.2f}, {plan.clamp_events} clamped"
            )

        with _stage(4, "compress", timings):
            archive_path = output_dir / "field.adlc"
            archive = cmd_compress(field, pset, plan, archive_path, config.workers)
            uniform_archive = cmd_compress(field, pset, uniform, workers=config.workers)
            report.adaptive_ratio = archive.ratio
            report.uniform_ratio = uniform_archive.ratio
            logger.info(
                f"Measured ratio: adaptive {archive.ratio:.3f}, uniform {uniform_archive.ratio:.3f} "
                f"({report.improvement:+.1%})"
            )

        with _stage(5, "decompress", timings):
            recon = cmd_decompress(archive_path, config.workers)
            recon_uniform = cmd_decompress(uniform_archive, config.workers)

        with _stage(6, "verify", timings):
            report.adaptive = verify_reconstruction(
                field, recon, pset, plan, features, config, output_dir, "adaptive"
            )
            report.uniform = verify_reconstruction(
                field, recon_uniform, pset, uniform, features, config, output_dir, "uniform"
            )
            if report.adaptive.halo_comparison is not None:
                catalog = find_halos(field, config.t_boundary, config.resolved_t_halo(), config.connectivity)
                write_catalog_csv(catalog, output_dir / "catalog.csv")

        if config.snapshots:
            with _stage(7, "snapshots", timings):
                report.snapshots = run_snapshots(config, model, eb_avg)
                write_table_csv(report.snapshots, output_dir / "snapshots.csv")

        with _stage(8, "report", timings):
            _write_reports(report, config)

    except StageFailure as e:
        logger.error(str(e))
        report.failed_stage = e.stage
        report.exit_code = EXIT_STAGE
        return report

    report.exit_code = EXIT_PASS if report.adaptive.passed else EXIT_FAIL
    logger.info("=" * 80)
    if report.exit_code == EXIT_PASS:
        logger.success(f"Pipeline PASS; reports saved to {output_dir}")
    else:
        logger.error(f"Pipeline verification FAIL; reports saved to {output_dir}")
    logger.info("=" * 80)
    return report


def cmd_overhead(config: PipelineConfig) -> Dict[str, float]:
    """
    Wall time of feature extraction and planning relative to compression

    Everything runs on one thread. Calibration is offline work and is not timed.
    """
    field = field_from_config(config.field_path, config.role, config.synth_dims, config.seed)
    pset = partition_field(field, config.block_dims)
    eb_avg = resolve_eb_avg(config, field.dims)

    features = extract_features(pset, field, config.t_boundary)
    model = obtain_rate_model(config, pset, field, features)
    # warm the compiled kernels so compilation is not billed to either side
    cmd_compress(field, pset, plan_uniform(eb_avg, pset.M))

    start = time.perf_counter()
    features = extract_features(
        pset, field, config.t_boundary, with_entropy=config.key_feature == "entropy"
    )
    t_features = time.perf_counter() - start

    start = time.perf_counter()
    plan = make_plan(config, features, model, eb_avg)
    t_plan = time.perf_counter() - start

    start = time.perf_counter()
    archive = cmd_compress(field, pset, plan, workers=1)
    t_compress = time.perf_counter() - start

    result = {
        "cells": float(field.cell_count),
        "partitions": float(pset.M),
        "feature_seconds": t_features,
        "plan_seconds": t_plan,
        "compress_seconds": t_compress,
        "overhead_ratio": (t_features + t_plan) / t_compress,
        "feature_cells_per_second": field.cell_count / t_features if t_features > 0 else float("inf"),
        "ratio": archive.ratio,
    }
    logger.info(
        f"Overhead: features {t_features:.4f}s + plan {t_plan:.4f}s vs compress {t_compress:.4f}s "
        f"-> {result['overhead_ratio']:.2%}"
    )
    if config.output_dir:
        write_table_csv([result], Path(config.output_dir) / "overhead.csv")
    return result
