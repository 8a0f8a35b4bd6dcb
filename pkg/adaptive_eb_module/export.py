"""
Export features, plans, spectra, halo catalogs and report tables to CSV
"""

from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from loguru import logger
import numpy as np
import pandas as pd

from adaptive_eb_module.models import (
    CatalogComparison,
    CompressionPlan,
    HaloCatalog,
    PartitionFeatures,
    SpectrumVerdict,
)

PLAN_COLUMNS = ["partition_id", "eb", "predicted_bitrate", "C"]


def _write(df: pd.DataFrame, output_file: Path, summary: Optional[Mapping[str, object]] = None):
    """Write a table, optionally preceded by ``# key=value`` summary lines"""
    output_file = Path(output_file)
    output_file.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(output_file, "w", encoding="utf-8", newline="") as f:
            for key, value in (summary or {}).items():
                f.write(f"# {key}={value}\n")
            df.to_csv(f, index=False)
    except OSError as e:
        raise OSError(f"Cannot write {output_file}: {e}") from e
    logger.info(f"CSV saved to {output_file} ({len(df)} rows)")
    return df


def read_summary(input_file: Path) -> Dict[str, str]:
    """The ``# key=value`` lines at the top of a report CSV"""
    summary = {}
    with open(input_file, encoding="utf-8") as f:
        for line in f:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].rstrip("\n").partition("=")
            summary[key] = value
    return summary


def write_features_csv(features: Sequence[PartitionFeatures], output_file: Path) -> pd.DataFrame:
    df = pd.DataFrame(
        {
            "partition_id": [f.partition_id for f in features],
            "mean": [f.mean for f in features],
            "cell_count": [f.cell_count for f in features],
            "n_ref": [f.n_ref for f in features],
            "entropy": [f.entropy for f in features],
        }
    )
    return _write(df, output_file)


def read_features_csv(input_file: Path) -> List[PartitionFeatures]:
    df = pd.read_csv(input_file, comment="#")
    return [
        PartitionFeatures(
            partition_id=int(r.partition_id),
            mean=float(r.mean),
            cell_count=int(r.cell_count),
            n_ref=float(r.n_ref),
            entropy=float(r.entropy),
        )
        for r in df.itertuples(index=False)
    ]


def write_plan_csv(
    plan: CompressionPlan, output_file: Path, extra: Optional[Mapping[str, object]] = None
) -> pd.DataFrame:
    """
    Save a plan: one row per partition plus a summary block

    Parameters:
    - plan: CompressionPlan to save
    - output_file: CSV path
    - extra: additional summary entries (e.g. rate model path)
    """
    bitrates = plan.bitrates if plan.bitrates is not None else np.full(plan.M, np.nan)
    C = plan.C if plan.C is not None else np.full(plan.M, np.nan)
    df = pd.DataFrame(
        {"partition_id": np.arange(plan.M), "eb": plan.ebs, "predicted_bitrate": bitrates, "C": C}
    )
    summary = {
        "strategy": plan.strategy,
        "eb_avg": repr(float(plan.eb_avg)),
        "predicted_bitrate": plan.predicted_bitrate,
        "predicted_ratio": plan.predicted_ratio,
        "predicted_sigma3d": plan.predicted_sigma3d,
        "predicted_mass_fault": plan.predicted_mass_fault,
        "clamp_events": plan.clamp_events,
        "extrapolated": plan.extrapolated,
    }
    summary.update(extra or {})
    return _write(df, output_file, summary)


def read_plan_csv(input_file: Path) -> CompressionPlan:
    """Load a plan written by write_plan_csv; error bounds round-trip exactly"""
    summary = read_summary(input_file)
    df = pd.read_csv(input_file, comment="#", float_precision="round_trip")
    missing = set(PLAN_COLUMNS[:2]) - set(df.columns)
    if missing:
        raise ValueError(f"{input_file}: plan is missing columns {sorted(missing)}")
    df = df.sort_values("partition_id")

    def number(key: str) -> float:
        return float(summary.get(key, "nan"))

    return CompressionPlan(
        ebs=df["eb"].to_numpy(dtype=np.float64),
        eb_avg=number("eb_avg"),
        predicted_bitrate=number("predicted_bitrate"),
        predicted_sigma3d=number("predicted_sigma3d"),
        predicted_mass_fault=number("predicted_mass_fault"),
        clamp_events=int(float(summary.get("clamp_events", 0))),
        strategy=summary.get("strategy", "uniform"),
        C=df["C"].to_numpy(dtype=np.float64) if "C" in df else None,
        bitrates=df["predicted_bitrate"].to_numpy(dtype=np.float64) if "predicted_bitrate" in df else None,
        extrapolated=int(float(summary.get("extrapolated", 0))),
    )


def write_spectrum_csv(verdict: SpectrumVerdict, output_file: Path) -> pd.DataFrame:
    df = pd.DataFrame(
        {
            "k_bin_center": verdict.k_centers,
            "P_orig": verdict.P_orig,
            "P_recon": verdict.P_recon,
            "ratio": verdict.ratio,
            "mode_count": verdict.mode_counts,
        }
    )
    summary = {
        "verdict": "PASS" if verdict.passed else "FAIL",
        "k_cut": verdict.k_cut,
        "tol": verdict.tol,
        "max_deviation": verdict.max_deviation,
    }
    return _write(df, output_file, summary)


def write_catalog_csv(catalog: HaloCatalog, output_file: Path) -> pd.DataFrame:
    df = pd.DataFrame(
        [
            {
                "id": h.id,
                "cell_count": h.cell_count,
                "mass": h.mass,
                "cx": h.centroid[0],
                "cy": h.centroid[1],
                "cz": h.centroid[2],
                "peak": h.peak,
            }
            for h in catalog.halos
        ],
        columns=["id", "cell_count", "mass", "cx", "cy", "cz", "peak"],
    )
    summary = {"t_boundary": catalog.t_boundary, "t_halo": catalog.t_halo, "halos": len(catalog)}
    return _write(df, output_file, summary)


def write_comparison_csv(comparison: CatalogComparison, output_file: Path) -> pd.DataFrame:
    """Per-matched-halo rows with a summary block of counts and error statistics"""
    columns = [
        "orig_id",
        "recon_id",
        "displacement",
        "orig_cells",
        "recon_cells",
        "orig_mass",
        "recon_mass",
        "mass_ratio",
        "mass_diff_per_cell",
    ]
    df = pd.DataFrame(
        [
            {
                "orig_id": m.orig_id,
                "recon_id": m.recon_id,
                "displacement": m.displacement,
                "orig_cells": m.orig_cells,
                "recon_cells": m.recon_cells,
                "orig_mass": m.orig_mass,
                "recon_mass": m.recon_mass,
                "mass_ratio": m.mass_ratio,
                "mass_diff_per_cell": m.mass_diff_per_cell,
            }
            for m in comparison.matched
        ],
        columns=columns,
    )
    summary = {
        "matched": len(comparison.matched),
        "unmatched_orig": len(comparison.unmatched_orig),
        "unmatched_recon": len(comparison.unmatched_recon),
        "count_change": comparison.count_change,
        "mean_displacement": comparison.mean_displacement,
        "max_displacement": comparison.max_displacement,
        "mass_ratio_rmse": comparison.mass_ratio_rmse,
        "mass_error_rmse": comparison.mass_error_rmse,
        "min_cells": comparison.min_cells,
    }
    return _write(df, output_file, summary)


def write_error_histogram_csv(
    counts: np.ndarray, edges: np.ndarray, output_file: Path
) -> pd.DataFrame:
    df = pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts})
    return _write(df, output_file)


def write_effective_cells_csv(
    features: Sequence[PartitionFeatures], output_file: Path, bins_per_decade: int = 4
) -> pd.DataFrame:
    """
    Log-binned histogram of the boundary-cell coefficient n_ref across partitions

    Partitions with n_ref = 0 get their own row with bin edges (0, 0).
    """
    n_ref = np.array([f.n_ref for f in features], dtype=np.float64)
    rows: List[Tuple[float, float, int]] = [(0.0, 0.0, int(np.count_nonzero(n_ref == 0)))]
    positive = n_ref[n_ref > 0]
    if positive.size:
        lo = np.floor(np.log10(positive.min()))
        hi = np.ceil(np.log10(positive.max())) + 1.0 / bins_per_decade
        edges = 10.0 ** np.arange(lo, hi + 1e-9, 1.0 / bins_per_decade)
        counts, edges = np.histogram(positive, bins=edges)
        rows += [(float(a), float(b), int(c)) for a, b, c in zip(edges[:-1], edges[1:], counts)]
    df = pd.DataFrame(rows, columns=["n_ref_low", "n_ref_high", "partitions"])
    return _write(df, output_file)


def write_bit_quality_csv(
    plan: CompressionPlan, ratios: np.ndarray, output_file: Path
) -> pd.DataFrame:
    df = pd.DataFrame(
        {"partition_id": np.arange(plan.M), "eb": plan.ebs, "bit_quality_ratio": ratios}
    )
    return _write(df, output_file, {"strategy": plan.strategy})


def write_table_csv(
    rows: Sequence[Mapping[str, object]],
    output_file: Path,
    summary: Optional[Mapping[str, object]] = None,
) -> pd.DataFrame:
    """
    Generic report table (timings, ratio comparison, sigma comparison, fault cells, snapshots)

    Parameters:
    - rows: one mapping per row, keys become columns in first-seen order
    - output_file: CSV path
    - summary: optional ``# key=value`` block
    """
    return _write(pd.DataFrame(list(rows)), output_file, summary)
