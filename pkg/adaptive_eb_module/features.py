from concurrent.futures import ThreadPoolExecutor
import math
from pathlib import Path
from typing import List, Optional, Tuple

from loguru import logger
import numpy as np
import typer

from adaptive_eb_module.config import PROCESSED_DATA_DIR
from adaptive_eb_module.models import Block, Field3D, PartitionFeatures, PartitionSet

app = typer.Typer()


def count_boundary_cells(values: np.ndarray, t_boundary: float, eb: float) -> int:
    """
    Count cells whose value lies in the open interval (t_boundary - eb, t_boundary + eb)

    Parameters
    ----------
    values : np.ndarray
        Cell values of one partition (any shape)
    t_boundary : float
        Halo candidate threshold
    eb : float
        Half width of the interval, > 0

    Returns
    -------
    int
        n_bc; cells exactly on either end are excluded
    """
    if eb <= 0:
        raise ValueError(f"eb must be positive, got {eb}")
    v = np.asarray(values)
    return int(np.count_nonzero((v > t_boundary - eb) & (v < t_boundary + eb)))


def partition_entropy(values: np.ndarray, bin_width: float) -> float:
    """Shannon entropy in bits of values binned at ``bin_width``"""
    bins = np.floor(np.asarray(values, dtype=np.float64).ravel() / bin_width)
    _, counts = np.unique(bins, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum())


def _block_features(
    partition_id: int,
    block: Block,
    field: Field3D,
    t_boundary: float,
    eb_ref: float,
    with_entropy: bool,
) -> PartitionFeatures:
    values = field.values[block.slices]
    return PartitionFeatures(
        partition_id=partition_id,
        mean=float(np.abs(values, dtype=np.float64).mean()),
        cell_count=block.cell_count,
        n_ref=float(count_boundary_cells(values, t_boundary, eb_ref)),
        entropy=partition_entropy(values, 2.0 * eb_ref) if with_entropy else float("nan"),
    )


def extract_features(
    pset: PartitionSet,
    field: Field3D,
    t_boundary: float = 88.16,
    eb_ref: float = 1.0,
    with_entropy: bool = False,
    workers: int = 1,
) -> List[PartitionFeatures]:
    """
    Gather the per-partition features the planner needs

    For every block: mean of |value| (the rate-model key), n_ref = boundary cells at
    ``eb_ref`` (the halo-fault coefficient, n_bc(eb) ~ n_ref * eb) and, optionally,
    the binned entropy.

    Parameters
    ----------
    pset : PartitionSet
        Partitioning of ``field``
    field : Field3D
        Field values
    t_boundary : float
        Halo candidate threshold (default 88.16)
    eb_ref : float
        Reference half width for n_ref, > 0 (default 1.0)
    with_entropy : bool
        Also compute the entropy feature (costs a sort per block)
    workers : int
        Blocks processed concurrently; results equal the sequential ones

    Returns
    -------
    List[PartitionFeatures]
        One entry per partition, in partition order
    """
    if eb_ref <= 0:
        raise ValueError(f"eb_ref must be positive, got {eb_ref}")
    if tuple(pset.field_dims) != tuple(field.dims):
        raise ValueError(f"partition set is for {pset.field_dims}, field is {field.dims}")

    def task(item):
        pid, block = item
        return _block_features(pid, block, field, t_boundary, eb_ref, with_entropy)

    items = list(enumerate(pset.blocks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            features = list(pool.map(task, items))
    else:
        features = [task(item) for item in items]

    logger.debug(
        f"Extracted features for {len(features)} partitions "
        f"(total n_ref={sum(f.n_ref for f in features):.0f})"
    )
    return features


def global_mean(
    features: List[PartitionFeatures], known_mean: Optional[float] = None
) -> float:
    """
    Cell-count-weighted mean of the partition means

    Stands in for the all-reduce done across ranks in situ. The sum is exactly rounded
    (``math.fsum``) so the reduction order does not change the result.

    Parameters
    ----------
    features : List[PartitionFeatures]
        Non-empty feature list
    known_mean : float, optional
        Overall mean fixed by the simulation (density fields); returned as-is

    Returns
    -------
    float
        Overall mean of |value|
    """
    if not features:
        raise ValueError("global_mean needs at least one partition")
    if known_mean is not None:
        return float(known_mean)
    total_cells = sum(f.cell_count for f in features)
    return math.fsum(f.mean * f.cell_count for f in features) / total_cells


def features_to_csv(
    field_path: Path,
    output_path: Path,
    role: str,
    block_dims: Tuple[int, int, int],
    t_boundary: float = 88.16,
    eb_ref: float = 1.0,
    with_entropy: bool = False,
    workers: int = 1,
) -> List[PartitionFeatures]:
    """Load a field file, partition it and write its features CSV"""
    from adaptive_eb_module.dataset import load_field, partition_field
    from adaptive_eb_module.export import write_features_csv

    field = load_field(field_path, expected_role=role)
    pset = partition_field(field, block_dims)
    features = extract_features(pset, field, t_boundary, eb_ref, with_entropy=with_entropy, workers=workers)
    write_features_csv(features, output_path)
    return features


@app.command()
def main(
    input_path: Path = PROCESSED_DATA_DIR / "field.f3d",
    output_path: Path = PROCESSED_DATA_DIR / "features.csv",
    role: str = "baryon_density",
    block_dims: str = typer.Option("32,32,32", "--block-dims"),
    t_boundary: float = 88.16,
    eb_ref: float = 1.0,
    entropy: bool = False,
):
    """Extract per-partition features of a field into a CSV"""
    from adaptive_eb_module.dataset import parse_block_dims

    logger.info("Generating features from field...")
    features = features_to_csv(
        input_path, output_path, role, parse_block_dims(block_dims), t_boundary, eb_ref, entropy
    )
    logger.info(f"Global mean: {global_mean(features):.6g}")
    logger.success("Features generation complete.")


if __name__ == "__main__":
    app()
