"""
Command-line entry point: ``adaptive-eb <command>``

Exit codes: 0 verification PASS (or command done), 1 verification FAIL,
2 a stage raised, 3 bad arguments or config.
"""

from pathlib import Path
from typing import Any, Optional

from loguru import logger
import typer

from adaptive_eb_module.archive import cmd_compress, cmd_decompress, read_archive
from adaptive_eb_module.config import MODELS_DIR, PROCESSED_DATA_DIR, RAW_DATA_DIR, REPORTS_DIR, load_config
from adaptive_eb_module.dataset import load_field, parse_block_dims, partition_field, save_field, synthesize_to_file
from adaptive_eb_module.errors import StageFailure
from adaptive_eb_module.export import (
    read_features_csv,
    read_plan_csv,
    write_catalog_csv,
    write_plan_csv,
    write_table_csv,
)
from adaptive_eb_module.features import extract_features, features_to_csv
from adaptive_eb_module.halos import find_halos
from adaptive_eb_module.modeling.train import calibrate_to_file
from adaptive_eb_module.modeling.train import load_rate_model
from adaptive_eb_module.models import CompressionPlan
from adaptive_eb_module.pipeline import (
    EXIT_ARGS,
    EXIT_FAIL,
    EXIT_PASS,
    EXIT_STAGE,
    cmd_overhead,
    cmd_pipeline,
    make_plan,
    resolve_eb_avg,
    verify_reconstruction,
)

app = typer.Typer(help="Adaptive per-partition error bounds for lossy field compression")

ConfigOption = typer.Option(None, "--config", "-c", help="Flat key=value config file")
BlockDimsOption = typer.Option(None, "--block-dims", help="Partition size X,Y,Z")


def _config(config_path: Optional[Path], validate: bool = False, **overrides: Any):
    """Merged config; any problem exits with code 3"""
    try:
        if overrides.get("block_dims") is not None:
            overrides["block_dims"] = ",".join(str(d) for d in parse_block_dims(overrides["block_dims"]))
        return load_config(config_path, overrides, validate=validate)
    except (ValueError, OSError) as e:
        logger.error(f"Invalid arguments: {e}")
        raise typer.Exit(EXIT_ARGS)


def _run(stage: str, fn, *args, **kwargs):
    """Call ``fn``; a raised exception becomes exit code 2 with the stage name"""
    try:
        return fn(*args, **kwargs)
    except typer.Exit:
        raise
    except Exception as e:
        logger.error(str(StageFailure(stage, f"{type(e).__name__}: {e}")))
        raise typer.Exit(EXIT_STAGE)


@app.command()
def synth(
    output_path: Path = RAW_DATA_DIR / "synthetic.f3d",
    role: str = "baryon_density",
    dims: str = "128,128,128",
    seed: int = 1,
    step: int = 0,
    smooth: bool = False,
):
    """Write a synthetic Nyx-like field"""
    try:
        field_dims = parse_block_dims(dims)
    except ValueError as e:
        logger.error(f"Invalid arguments: {e}")
        raise typer.Exit(EXIT_ARGS)

    _run("synth", synthesize_to_file, output_path, role, field_dims, seed, step, smooth)
    logger.success(f"Synthetic {role} field saved to {output_path}")


@app.command()
def features(
    field_path: Path,
    output_path: Path = PROCESSED_DATA_DIR / "features.csv",
    config: Optional[Path] = ConfigOption,
    block_dims: Optional[str] = BlockDimsOption,
    role: Optional[str] = None,
):
    """Extract per-partition features to CSV"""
    cfg = _config(config, block_dims=block_dims, role=role)
    _run(
        "extract",
        features_to_csv,
        field_path,
        output_path,
        cfg.role,
        cfg.block_dims,
        cfg.t_boundary,
        with_entropy=cfg.key_feature == "entropy",
        workers=cfg.workers,
    )
    logger.success(f"Features saved to {output_path}")


@app.command()
def calibrate(
    field_path: Path,
    model_path: Path = MODELS_DIR / "rate_model.json",
    config: Optional[Path] = ConfigOption,
    block_dims: Optional[str] = BlockDimsOption,
    role: Optional[str] = None,
    workers: Optional[int] = None,
):
    """Calibrate the rate model on a field and save it as JSON"""
    cfg = _config(config, block_dims=block_dims, role=role, workers=workers)
    _run(
        "calibrate",
        calibrate_to_file,
        field_path,
        model_path,
        cfg.role,
        cfg.block_dims,
        cfg.calibration_ebs,
        cfg.calibration_stride,
        cfg.key_feature,
        cfg.workers,
    )
    logger.success(f"Rate model saved to {model_path}")


@app.command()
def plan(
    features_path: Path,
    model_path: Path = MODELS_DIR / "rate_model.json",
    output_path: Path = PROCESSED_DATA_DIR / "plan.csv",
    config: Optional[Path] = ConfigOption,
    strategy: Optional[str] = None,
    eb_avg: Optional[float] = None,
    target_sigma: Optional[float] = None,
    mass_fault_budget: Optional[float] = None,
):
    """Plan per-partition error bounds from a features CSV and a rate model"""
    cfg = _config(
        config,
        validate=True,
        strategy=strategy,
        eb_avg=eb_avg,
        target_sigma=target_sigma,
        mass_fault_budget=mass_fault_budget,
    )

    def run():
        feats = read_features_csv(features_path)
        model = load_rate_model(model_path)
        n_cells = sum(f.cell_count for f in feats)
        result = make_plan(cfg, feats, model, resolve_eb_avg(cfg, [n_cells]))
        write_plan_csv(result, output_path, {"rate_model": model_path})
        return result

    result: CompressionPlan = _run("plan", run)
    logger.success(
        f"Plan ({result.strategy}) saved to {output_path}: predicted ratio {result.predicted_ratio:.2f}"
    )


@app.command()
def compress(
    field_path: Path,
    plan_path: Path,
    archive_path: Path = PROCESSED_DATA_DIR / "field.adlc",
    config: Optional[Path] = ConfigOption,
    block_dims: Optional[str] = BlockDimsOption,
    role: Optional[str] = None,
    workers: Optional[int] = None,
):
    """Compress a field with a saved plan"""
    cfg = _config(config, block_dims=block_dims, role=role, workers=workers)

    def run():
        field = load_field(field_path, expected_role=cfg.role)
        pset = partition_field(field, cfg.block_dims)
        archive_path.parent.mkdir(parents=True, exist_ok=True)
        return cmd_compress(field, pset, read_plan_csv(plan_path), archive_path, cfg.workers)

    archive = _run("compress", run)
    logger.success(f"Archive saved to {archive_path}: ratio {archive.ratio:.3f}")


@app.command()
def decompress(
    archive_path: Path,
    output_path: Path = PROCESSED_DATA_DIR / "reconstructed.f3d",
    workers: int = 1,
):
    """Rebuild a field from an archive"""

    def run():
        field = cmd_decompress(archive_path, workers)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        save_field(field, output_path)

    _run("decompress", run)
    logger.success(f"Reconstructed field saved to {output_path}")


def _verify(orig_path: Path, archive_path: Path, cfg, output_dir: Optional[Path]) -> int:
    def run():
        orig = load_field(orig_path, expected_role=cfg.role)
        archive = read_archive(archive_path)
        recon = cmd_decompress(archive, cfg.workers)
        pset = partition_field(orig, archive.block_dims)
        feats = extract_features(pset, orig, cfg.t_boundary)
        archived_plan = CompressionPlan(
            ebs=archive.ebs,
            eb_avg=float(archive.ebs.mean()),
            predicted_bitrate=float("nan"),
            predicted_sigma3d=float("nan"),
            predicted_mass_fault=float("nan"),
            clamp_events=0,
            strategy="archive",
        )
        if output_dir is not None:
            output_dir.mkdir(parents=True, exist_ok=True)
        result = verify_reconstruction(orig, recon, pset, archived_plan, feats, cfg, output_dir, "archive")
        if output_dir is not None:
            if result.halo_comparison is not None:
                catalog = find_halos(orig, cfg.t_boundary, cfg.resolved_t_halo(), cfg.connectivity)
                write_catalog_csv(catalog, output_dir / "catalog.csv")
            write_table_csv(
                [
                    {
                        "measured_ratio": archive.ratio,
                        "spectrum": "PASS" if result.spectrum.passed else "FAIL",
                        "max_deviation": result.spectrum.max_deviation,
                        "halo": "PASS" if result.halo_passed else "FAIL",
                        "predicted_sigma": result.sigma_predicted,
                        "measured_sigma": result.sigma_measured,
                    }
                ],
                output_dir / "verification.csv",
            )
        return result

    result = _run("verify", run)
    return EXIT_PASS if result.passed else EXIT_FAIL


@app.command()
def verify(
    orig_path: Path,
    archive_path: Path,
    config: Optional[Path] = ConfigOption,
    role: Optional[str] = None,
    k_cut: Optional[float] = None,
    tol: Optional[float] = None,
):
    """Check an archive's reconstruction: spectrum, and halos for baryon density"""
    cfg = _config(config, role=role, k_cut=k_cut, tol=tol)
    code = _verify(orig_path, archive_path, cfg, None)
    logger.info(f"Verification {'PASS' if code == EXIT_PASS else 'FAIL'}")
    raise typer.Exit(code)


@app.command()
def report(
    orig_path: Path,
    archive_path: Path,
    output_dir: Path = REPORTS_DIR / "verification",
    config: Optional[Path] = ConfigOption,
    role: Optional[str] = None,
    k_cut: Optional[float] = None,
    tol: Optional[float] = None,
):
    """Verify an archive and write the spectrum, error-histogram and halo reports"""
    cfg = _config(config, role=role, k_cut=k_cut, tol=tol)
    code = _verify(orig_path, archive_path, cfg, output_dir)
    logger.info(f"Reports saved to {output_dir}")
    raise typer.Exit(code)


@app.command()
def pipeline(
    config: Optional[Path] = ConfigOption,
    field_path: Optional[str] = typer.Option(None, "--field"),
    role: Optional[str] = None,
    block_dims: Optional[str] = BlockDimsOption,
    eb_avg: Optional[float] = None,
    target_sigma: Optional[float] = None,
    mass_fault_budget: Optional[float] = None,
    strategy: Optional[str] = None,
    tol: Optional[float] = None,
    rate_model_path: Optional[str] = typer.Option(None, "--rate-model"),
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    output_dir: Optional[str] = None,
):
    """Run the whole chain and write the report bundle"""
    cfg = _config(
        config,
        validate=True,
        field_path=field_path,
        role=role,
        block_dims=block_dims,
        eb_avg=eb_avg,
        target_sigma=target_sigma,
        mass_fault_budget=mass_fault_budget,
        strategy=strategy,
        tol=tol,
        rate_model_path=rate_model_path,
        seed=seed,
        workers=workers,
        output_dir=output_dir,
    )
    result = cmd_pipeline(cfg)
    raise typer.Exit(result.exit_code)


@app.command()
def overhead(
    config: Optional[Path] = ConfigOption,
    field_path: Optional[str] = typer.Option(None, "--field"),
    block_dims: Optional[str] = BlockDimsOption,
    eb_avg: Optional[float] = None,
    output_dir: Optional[str] = None,
):
    """Time feature extraction and planning against compression, single-threaded"""
    cfg = _config(
        config,
        validate=True,
        field_path=field_path,
        block_dims=block_dims,
        eb_avg=eb_avg,
        output_dir=output_dir,
    )
    result = _run("overhead", cmd_overhead, cfg)
    logger.success(f"Planning overhead: {result['overhead_ratio']:.2%} of compression time")


if __name__ == "__main__":
    app()
