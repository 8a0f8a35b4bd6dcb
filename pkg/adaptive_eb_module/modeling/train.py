from concurrent.futures import ThreadPoolExecutor
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from loguru import logger
import numpy as np
from sklearn.linear_model import LinearRegression
from tqdm import tqdm
import typer

from adaptive_eb_module.codec import compress_block, measure_bitrate
from adaptive_eb_module.config import MODELS_DIR, PROCESSED_DATA_DIR
from adaptive_eb_module.errors import CalibrationError
from adaptive_eb_module.features import extract_features
from adaptive_eb_module.models import Field3D, PartitionFeatures, PartitionSet, RateModel

app = typer.Typer()

MIN_POINTS = 3


def fit_power_law(ebs: Sequence[float], bitrates: Sequence[float]) -> Tuple[float, float]:
    """
    Least-squares fit of ln b = slope * ln eb + intercept

    Returns
    -------
    (float, float)
        ``(c, C)`` of b = C * eb**c
    """
    x = np.log(np.asarray(ebs, dtype=np.float64)).reshape(-1, 1)
    y = np.log(np.asarray(bitrates, dtype=np.float64))
    reg = LinearRegression().fit(x, y)
    return float(reg.coef_[0]), float(np.exp(reg.intercept_))


def fit_rate_model(
    eb_grid: Sequence[float],
    bitrates: np.ndarray,
    keys: Sequence[float],
    partition_ids: Optional[Sequence[int]] = None,
    valid_bitrate_max: float = 2.0,
    key_feature: str = "mean",
) -> RateModel:
    """
    Fit the shared exponent and the key-feature -> C map from a bitrate table

    Parameters
    ----------
    eb_grid : Sequence[float]
        Error bounds the table was measured at
    bitrates : np.ndarray
        Shape (partitions, len(eb_grid)); measured bits/value
    keys : Sequence[float]
        Key feature value of every row
    partition_ids : Sequence[int], optional
        Row labels for the report (defaults to row numbers)
    valid_bitrate_max : float
        Points at or above this bitrate are left out of the fit
    key_feature : str
        Name of the key feature, stored in the model

    Returns
    -------
    RateModel
        c = median of per-partition slopes, C_m = exp(mean(ln b - c ln eb)) and
        C(x) = alpha * ln(x + eps) + beta fitted over the C_m

    Raises
    ------
    CalibrationError
        Every partition has fewer than three usable points, or the exponent is not negative
    """
    eb_grid = np.asarray(eb_grid, dtype=np.float64)
    bitrates = np.atleast_2d(np.asarray(bitrates, dtype=np.float64))
    keys = np.asarray(keys, dtype=np.float64)
    if partition_ids is None:
        partition_ids = list(range(len(bitrates)))
    if bitrates.shape != (len(keys), len(eb_grid)):
        raise ValueError(
            f"bitrate table shape {bitrates.shape} does not match "
            f"{len(keys)} partitions x {len(eb_grid)} error bounds"
        )

    slopes: List[float] = []
    used: List[int] = []
    excluded: List[int] = []
    for row, pid in enumerate(partition_ids):
        usable = (bitrates[row] < valid_bitrate_max) & (bitrates[row] > 0)
        if usable.sum() < MIN_POINTS:
            excluded.append(int(pid))
            continue
        slope, _ = fit_power_law(eb_grid[usable], bitrates[row, usable])
        slopes.append(slope)
        used.append(row)

    if not used:
        raise CalibrationError(
            f"no partition has {MIN_POINTS} calibration points below bitrate {valid_bitrate_max}"
        )
    if excluded:
        logger.warning(f"Excluded {len(excluded)} partitions from calibration: {excluded}")

    c = float(np.median(slopes))
    if c >= 0:
        raise CalibrationError(f"fitted exponent c = {c:.4g} is not negative")

    C_m = np.empty(len(used))
    for i, row in enumerate(used):
        usable = (bitrates[row] < valid_bitrate_max) & (bitrates[row] > 0)
        C_m[i] = np.exp(np.mean(np.log(bitrates[row, usable]) - c * np.log(eb_grid[usable])))

    used_keys = keys[used]
    if len(used) == 1 or np.ptp(used_keys) == 0:
        alpha, beta = 0.0, float(np.mean(C_m))
    else:
        reg = LinearRegression().fit(np.log(used_keys + RateModel.EPS).reshape(-1, 1), C_m)
        alpha, beta = float(reg.coef_[0]), float(reg.intercept_)

    C_floor = float(C_m.min()) / 4.0
    fitted = np.maximum(alpha * np.log(used_keys + RateModel.EPS) + beta, C_floor)
    rel_residual = np.abs(fitted - C_m) / C_m
    report: Dict[str, object] = {
        "partition_ids": [int(partition_ids[r]) for r in used],
        "excluded": excluded,
        "slopes": [float(s) for s in slopes],
        "C_measured": [float(v) for v in C_m],
        "keys": [float(v) for v in used_keys],
        "max_rel_residual": float(rel_residual.max()),
        "median_rel_residual": float(np.median(rel_residual)),
        "eb_grid": [float(e) for e in eb_grid],
    }
    logger.debug(
        f"Rate model: c={c:.4f}, C(x)={alpha:.4g}*ln(x)+{beta:.4g}, "
        f"median residual {report['median_rel_residual']:.2%}"
    )
    return RateModel(
        c=c,
        fit_alpha=alpha,
        fit_beta=beta,
        valid_bitrate_max=valid_bitrate_max,
        C_floor=C_floor,
        key_feature=key_feature,
        calibration_report=report,
    )


def measure_bitrate_table(
    pset: PartitionSet,
    field: Field3D,
    partition_ids: Sequence[int],
    eb_grid: Sequence[float],
    workers: int = 1,
) -> np.ndarray:
    """Compress each listed partition at every error bound of the grid"""
    jobs = [(pid, j) for pid in partition_ids for j in range(len(eb_grid))]

    def task(job):
        pid, j = job
        block = compress_block(field.values[pset.blocks[pid].slices], float(eb_grid[j]))
        return measure_bitrate(block)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(tqdm(pool.map(task, jobs), total=len(jobs), desc="Calibrating"))
    else:
        results = [task(job) for job in tqdm(jobs, desc="Calibrating")]
    return np.asarray(results, dtype=np.float64).reshape(len(partition_ids), len(eb_grid))


def calibrate(
    pset: PartitionSet,
    field: Field3D,
    eb_grid: Sequence[float],
    sample_stride: int = 4,
    features: Optional[List[PartitionFeatures]] = None,
    key_feature: str = "mean",
    valid_bitrate_max: float = 2.0,
    workers: int = 1,
) -> RateModel:
    """
    Calibrate the rate model on a sample of partitions

    Partitions whose id is a multiple of ``sample_stride`` are compressed at every error
    bound of ``eb_grid``; the resulting bitrate table is fitted with fit_rate_model.

    Parameters
    ----------
    pset : PartitionSet
        Partitioning of ``field``
    field : Field3D
        Field to calibrate on
    eb_grid : Sequence[float]
        At least three positive error bounds, ideally spanning a decade or more
    sample_stride : int
        Every n-th partition is sampled, >= 1
    features : List[PartitionFeatures], optional
        Precomputed features; extracted here when missing
    key_feature : str
        ``mean`` or ``entropy``
    valid_bitrate_max : float
        Upper end of the modelled bitrate regime
    workers : int
        Concurrent compressions

    Returns
    -------
    RateModel
        Calibrated model
    """
    eb_grid = sorted(float(e) for e in eb_grid)
    if len(eb_grid) < MIN_POINTS:
        raise ValueError(f"eb_grid needs at least {MIN_POINTS} points, got {len(eb_grid)}")
    if eb_grid[0] <= 0:
        raise ValueError("eb_grid values must be positive")
    if eb_grid[-1] / eb_grid[0] < 10:
        logger.warning(f"eb_grid spans less than a decade: {eb_grid}")
    if sample_stride < 1:
        raise ValueError(f"sample_stride must be >= 1, got {sample_stride}")

    if features is None:
        features = extract_features(pset, field, with_entropy=key_feature == "entropy")

    sampled = list(range(0, pset.M, sample_stride))
    logger.info(
        f"Calibrating rate model on {len(sampled)} of {pset.M} partitions "
        f"at {len(eb_grid)} error bounds..."
    )
    table = measure_bitrate_table(pset, field, sampled, eb_grid, workers)
    keys = [features[pid].key(key_feature) for pid in sampled]
    model = fit_rate_model(eb_grid, table, keys, sampled, valid_bitrate_max, key_feature)
    model.calibration_report["role"] = field.name
    return model


def measure_C(
    pset: PartitionSet,
    field: Field3D,
    model: RateModel,
    eb_ref: float = 1.0,
    workers: int = 1,
) -> np.ndarray:
    """
    Measure every partition's C_m with one compression at ``eb_ref``

    C_m = b(eb_ref) / eb_ref**c, with the shared exponent of ``model``.
    """
    if eb_ref <= 0:
        raise ValueError(f"eb_ref must be positive, got {eb_ref}")
    table = measure_bitrate_table(pset, field, list(range(pset.M)), [eb_ref], workers)
    return table[:, 0] / eb_ref**model.c


def save_rate_model(model: RateModel, path: Path) -> None:
    """Write a rate model as JSON"""
    doc = {
        "c": model.c,
        "fit_alpha": model.fit_alpha,
        "fit_beta": model.fit_beta,
        "valid_bitrate_max": model.valid_bitrate_max,
        "C_floor": model.C_floor,
        "key_feature": model.key_feature,
        "residuals": model.calibration_report,
    }
    path = Path(path)
    try:
        path.write_text(json.dumps(doc, indent=2))
    except OSError as e:
        raise OSError(f"Cannot write rate model {path}: {e}") from e


def load_rate_model(path: Path) -> RateModel:
    """Read a rate model written by save_rate_model"""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise OSError(f"Cannot read rate model {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: not a rate model document: {e}") from e
    missing = {"c", "fit_alpha", "fit_beta"} - set(doc)
    if missing:
        raise ValueError(f"{path}: rate model is missing keys {sorted(missing)}")
    return RateModel(
        c=float(doc["c"]),
        fit_alpha=float(doc["fit_alpha"]),
        fit_beta=float(doc["fit_beta"]),
        valid_bitrate_max=float(doc.get("valid_bitrate_max", 2.0)),
        C_floor=float(doc.get("C_floor", 1e-6)),
        key_feature=doc.get("key_feature", "mean"),
        calibration_report=doc.get("residuals", {}),
    )


def calibrate_to_file(
    field_path: Path,
    model_path: Path,
    role: str,
    block_dims: Tuple[int, int, int],
    eb_grid: Sequence[float],
    stride: int,
    key_feature: str = "mean",
    workers: int = 1,
) -> RateModel:
    """Load a field file, calibrate on its partitions and save the model JSON"""
    from adaptive_eb_module.dataset import load_field, partition_field

    field = load_field(field_path, expected_role=role)
    pset = partition_field(field, block_dims)
    model = calibrate(pset, field, eb_grid, stride, key_feature=key_feature, workers=workers)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_rate_model(model, model_path)
    return model


@app.command()
def main(
    input_path: Path = PROCESSED_DATA_DIR / "field.f3d",
    model_path: Path = MODELS_DIR / "rate_model.json",
    role: str = "baryon_density",
    block_dims: str = typer.Option("32,32,32", "--block-dims"),
    eb_grid: str = "0.1,0.2,0.4,0.7,1.0",
    stride: int = 4,
    key_feature: str = "mean",
    workers: int = 1,
):
    """Calibrate a rate model on a field and save it as JSON"""
    from adaptive_eb_module.dataset import parse_block_dims

    logger.info("Training rate model...")
    grid = [float(e) for e in eb_grid.split(",") if e.strip()]
    model = calibrate_to_file(
        input_path, model_path, role, parse_block_dims(block_dims), grid, stride, key_feature, workers
    )
    logger.success(f"Rate model saved to {model_path} (c = {model.c:.4f})")


if __name__ == "__main__":
    app()
