"""
Grid halo finder and the halo fault-mass model
"""

from typing import List, Sequence, Tuple, Union

from loguru import logger
import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist

from adaptive_eb_module.models import (
    CatalogComparison,
    FaultPrediction,
    Field3D,
    Halo,
    HaloCatalog,
    MatchedHalo,
    PartitionFeatures,
)

FAULT_PROBABILITY = 0.25


def _values(field: Union[Field3D, np.ndarray]) -> np.ndarray:
    return field.values if isinstance(field, Field3D) else np.asarray(field)


def connectivity_structure(connectivity: int = 6) -> np.ndarray:
    """Structuring element for face (6) or full (26) adjacency"""
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


def label_candidates(
    values: np.ndarray, t_boundary: float, connectivity: int = 6
) -> Tuple[np.ndarray, int]:
    """Connected components of the cells with value > t_boundary"""
    mask = np.asarray(values) > t_boundary
    labels, n = ndimage.label(mask, structure=connectivity_structure(connectivity))
    return labels, int(n)


def find_halos(
    density: Union[Field3D, np.ndarray],
    t_boundary: float = 88.16,
    t_halo: float = 176.32,
    connectivity: int = 6,
) -> HaloCatalog:
    """
    Threshold the grid and keep the components whose peak exceeds ``t_halo``

    Parameters
    ----------
    density : Field3D or np.ndarray
        Density grid
    t_boundary : float
        Candidate threshold, > 0
    t_halo : float
        Peak threshold, >= t_boundary
    connectivity : int
        6 (faces) or 26 (faces, edges and corners)

    Returns
    -------
    HaloCatalog
        Halos ordered by (cell_count descending, linear index of the peak); ids follow
        that order. Mass is the sum of member values, centroid the unweighted mean
        member coordinate.
    """
    if not (t_boundary > 0 and t_halo >= t_boundary):
        raise ValueError(f"need t_halo >= t_boundary > 0, got {t_halo}, {t_boundary}")
    values = _values(density)
    labels, n = label_candidates(values, t_boundary, connectivity)
    if n == 0:
        return HaloCatalog(halos=[], t_boundary=t_boundary, t_halo=t_halo)

    index = np.arange(1, n + 1)
    flat = labels.ravel()
    cells = np.bincount(flat, minlength=n + 1)[1:]
    mass = np.bincount(flat, weights=values.ravel().astype(np.float64), minlength=n + 1)[1:]
    peaks = np.asarray(ndimage.maximum(values, labels, index), dtype=np.float64)
    peak_pos = ndimage.maximum_position(values, labels, index)
    centroids = ndimage.center_of_mass(labels > 0, labels, index)

    keep = [i for i in range(n) if peaks[i] > t_halo]
    peak_index = {i: int(np.ravel_multi_index(peak_pos[i], values.shape)) for i in keep}
    keep.sort(key=lambda i: (-int(cells[i]), peak_index[i]))

    halos = [
        Halo(
            id=new_id,
            cell_count=int(cells[i]),
            mass=float(mass[i]),
            centroid=tuple(float(c) for c in centroids[i]),
            peak=float(peaks[i]),
            peak_index=peak_index[i],
        )
        for new_id, i in enumerate(keep)
    ]
    logger.debug(f"Found {len(halos)} halos among {n} candidate groups")
    return HaloCatalog(halos=halos, t_boundary=t_boundary, t_halo=t_halo)


def predict_fault(
    features: Sequence[PartitionFeatures],
    ebs: Sequence[float],
    t_boundary: float = 88.16,
    eb_ref: float = 1.0,
) -> FaultPrediction:
    """
    Expected halo fault cells and fault mass for per-partition error bounds

    n_bc(m) = n_ref(m) * eb_m / eb_ref, a boundary cell flips candidacy with
    probability 1/4, so e_m = n_bc(m) / 4 and M_fault = t_boundary * sum(e_m).
    The normal-model spread sqrt(n_bc(m) / 3) is reported per partition.
    """
    ebs = np.asarray(ebs, dtype=np.float64)
    if len(features) != len(ebs):
        raise ValueError(f"{len(features)} partitions but {len(ebs)} error bounds")
    if np.any(ebs <= 0):
        raise ValueError("error bounds must be positive")
    n_ref = np.array([f.n_ref for f in features], dtype=np.float64)
    n_bc = n_ref * ebs / eb_ref
    e_m = FAULT_PROBABILITY * n_bc
    return FaultPrediction(
        e_m_list=e_m,
        mass_fault=float(t_boundary * e_m.sum()),
        partition_sigma_cells=np.sqrt(n_bc / 3.0),
    )


def candidacy_change(
    orig: Union[Field3D, np.ndarray], recon: Union[Field3D, np.ndarray], t_boundary: float
) -> Tuple[int, int]:
    """
    Cells whose halo candidacy differs between two grids

    Returns
    -------
    (int, int)
        Number of flipped cells and the signed change of the candidate count
    """
    a = _values(orig) > t_boundary
    b = _values(recon) > t_boundary
    return int(np.count_nonzero(a != b)), int(np.count_nonzero(b)) - int(np.count_nonzero(a))


def fault_cells_measured(
    orig: Union[Field3D, np.ndarray], recon: Union[Field3D, np.ndarray], t_boundary: float
) -> int:
    """Measured counterpart of sum(e_m): number of candidacy flips"""
    return candidacy_change(orig, recon, t_boundary)[0]


def compare_catalogs(
    orig: HaloCatalog,
    recon: HaloCatalog,
    match_radius: float = 2.0,
    min_cells: int = 10,
) -> CatalogComparison:
    """
    Greedily pair halos of two catalogs by centroid distance

    Candidate pairs within ``match_radius`` are taken in order of increasing distance,
    larger original mass first on ties; each halo is used at most once.
    """
    if (orig.t_boundary, orig.t_halo) != (recon.t_boundary, recon.t_halo):
        logger.warning("Comparing catalogs found with different thresholds")

    matched: List[MatchedHalo] = []
    if orig.halos and recon.halos:
        a = np.array([h.centroid for h in orig.halos])
        b = np.array([h.centroid for h in recon.halos])
        dist = cdist(a, b)
        i_idx, j_idx = np.nonzero(dist <= match_radius)
        order = sorted(
            zip(i_idx.tolist(), j_idx.tolist()),
            key=lambda p: (dist[p], -orig.halos[p[0]].mass, p[0], p[1]),
        )
        used_a, used_b = set(), set()
        for i, j in order:
            if i in used_a or j in used_b:
                continue
            used_a.add(i)
            used_b.add(j)
            ho, hr = orig.halos[i], recon.halos[j]
            matched.append(
                MatchedHalo(
                    orig_id=ho.id,
                    recon_id=hr.id,
                    displacement=float(dist[i, j]),
                    orig_cells=ho.cell_count,
                    recon_cells=hr.cell_count,
                    orig_mass=ho.mass,
                    recon_mass=hr.mass,
                )
            )
    matched.sort(key=lambda m: m.orig_id)

    matched_orig = {m.orig_id for m in matched}
    matched_recon = {m.recon_id for m in matched}
    displacements = np.array([m.displacement for m in matched])
    ratios = np.array([m.mass_ratio for m in matched if m.orig_cells >= min_cells])
    return CatalogComparison(
        matched=matched,
        unmatched_orig=[h.id for h in orig.halos if h.id not in matched_orig],
        unmatched_recon=[h.id for h in recon.halos if h.id not in matched_recon],
        mean_displacement=float(displacements.mean()) if displacements.size else 0.0,
        max_displacement=float(displacements.max()) if displacements.size else 0.0,
        mass_ratio_rmse=float(np.sqrt(np.mean(ratios**2))) if ratios.size else float("nan"),
        min_cells=min_cells,
    )
