"""
Data Model Definition for the fields, partitions, rate models and compression plans
used by the adaptive error-bound planner
"""

from dataclasses import dataclass, field
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

# Field roles and the value ranges a snapshot of each role is declared to hold
ROLE_RANGES: Dict[str, Tuple[float, float]] = {
    "baryon_density": (0.0, 1e5),
    "dark_matter_density": (0.0, 1e4),
    "temperature": (1e2, 1e7),
    "velocity_x": (-1e8, 1e8),
    "velocity_y": (-1e8, 1e8),
    "velocity_z": (-1e8, 1e8),
    "generic": (-3.4e38, 3.4e38),
}
ROLES = tuple(ROLE_RANGES)
DENSITY_ROLES = ("baryon_density", "dark_matter_density")
VELOCITY_ROLES = ("velocity_x", "velocity_y", "velocity_z")

Dims = Tuple[int, int, int]


@dataclass(eq=False)
class Field3D:
    """A named 3-D single-precision scalar grid"""

    name: str  # Role tag, one of ROLES
    dims: Dims  # (N_x, N_y, N_z)
    values: np.ndarray  # float32, shape == dims, C order
    value_range: Tuple[float, float]  # Declared (lo, hi)
    diagnostics: Dict[str, int] = field(default_factory=dict)  # e.g. out_of_range count

    def __post_init__(self):
        if self.name not in ROLE_RANGES:
            raise ValueError(f"Unknown field role: {self.name}")
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or any(d <= 0 for d in self.dims):
            raise ValueError(f"Field dims must be three positive integers, got {self.dims}")
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.size != self.cell_count:
            raise ValueError(
                f"values length {values.size} does not match dims {self.dims}"
            )
        values = values.reshape(self.dims)
        values.setflags(write=False)
        self.values = values

    @property
    def cell_count(self) -> int:
        return int(np.prod(self.dims))

    def out_of_range_count(self) -> int:
        """Number of finite values outside the declared value range"""
        lo, hi = self.value_range
        finite = np.isfinite(self.values)
        return int(np.count_nonzero(finite & ((self.values < lo) | (self.values > hi))))

    def with_values(self, values: np.ndarray) -> "Field3D":
        """Same role, dims and range, new values (e.g. a reconstruction)"""
        return Field3D(name=self.name, dims=self.dims, values=values, value_range=self.value_range)


@dataclass(frozen=True)
class Block:
    """One partition: origin offsets and extents in cell units"""

    origin: Dims
    extent: Dims

    @property
    def slices(self) -> Tuple[slice, slice, slice]:
        return tuple(slice(o, o + e) for o, e in zip(self.origin, self.extent))

    @property
    def cell_count(self) -> int:
        return self.extent[0] * self.extent[1] * self.extent[2]


@dataclass
class PartitionSet:
    """Block decomposition of a field"""

    field_dims: Dims
    block_dims: Dims
    blocks: List[Block]

    @property
    def M(self) -> int:
        return len(self.blocks)

    @property
    def grid_shape(self) -> Dims:
        """Number of blocks along each axis"""
        return tuple(math.ceil(n / b) for n, b in zip(self.field_dims, self.block_dims))

    def cell_counts(self) -> np.ndarray:
        return np.array([b.cell_count for b in self.blocks], dtype=np.int64)


@dataclass
class PartitionFeatures:
    """Per-partition statistics gathered in a single pass"""

    partition_id: int
    mean: float  # Mean of |value|
    cell_count: int
    n_ref: float  # Cells in (t_boundary - eb_ref, t_boundary + eb_ref)
    entropy: float = float("nan")  # Shannon entropy (bits) of values binned at 2 * eb_ref

    def key(self, key_feature: str = "mean") -> float:
        """Feature the rate model maps to C_m"""
        if key_feature == "mean":
            return self.mean
        if key_feature == "entropy":
            return self.entropy
        raise ValueError(f"Unsupported key feature: {key_feature}, please use 'mean' or 'entropy'")


@dataclass(eq=False)
class CompressedBlock:
    """Self-describing compressed bitstream for one partition"""

    eb: float
    dims: Dims
    codebook_counts: np.ndarray  # Number of codes per length, index 0 is length 1
    codebook_symbols: np.ndarray  # Symbols in canonical order
    quant_payload: bytes  # Huffman-coded quantization tokens
    outlier_indices: np.ndarray  # uint32 linear cell indices
    outlier_values: np.ndarray  # float32 raw values
    encoded_bits: int  # Bits used in quant_payload
    checksum: int = 0

    @property
    def cell_count(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]


@dataclass
class RateModel:
    """Power-law bit-rate model b = C * eb**c with C mapped from a partition feature"""

    c: float  # Shared exponent, negative
    fit_alpha: float  # C(x) = fit_alpha * ln(x + eps) + fit_beta
    fit_beta: float
    valid_bitrate_max: float = 2.0
    C_floor: float = 1e-6  # Smallest calibrated C_m / 4
    key_feature: str = "mean"
    calibration_report: Dict[str, object] = field(default_factory=dict)

    EPS = 1e-30


@dataclass(eq=False)
class CompressionPlan:
    """Per-partition error bounds and the model predictions for them"""

    ebs: np.ndarray
    eb_avg: float
    predicted_bitrate: float
    predicted_sigma3d: float
    predicted_mass_fault: float
    clamp_events: int
    strategy: str  # uniform | fft | halo | combined
    C: Optional[np.ndarray] = None  # Rate coefficients used for the prediction
    bitrates: Optional[np.ndarray] = None  # Predicted bits/value per partition
    extrapolated: int = 0  # Partitions predicted above valid_bitrate_max

    @property
    def M(self) -> int:
        return len(self.ebs)

    @property
    def predicted_ratio(self) -> float:
        return 32.0 / self.predicted_bitrate if self.predicted_bitrate > 0 else float("inf")


@dataclass
class SpectrumResult:
    """Radially binned power spectrum"""

    k_bins: np.ndarray  # Integer bin indices
    k_centers: np.ndarray  # Bin centres in wavenumber units
    P: np.ndarray  # Mean |X|^2 / (N^3)^2 per bin
    mode_counts: np.ndarray


@dataclass
class SpectrumVerdict:
    """Outcome of comparing a reconstructed power spectrum to the original"""

    passed: bool
    k_centers: np.ndarray
    P_orig: np.ndarray
    P_recon: np.ndarray
    ratio: np.ndarray
    mode_counts: np.ndarray
    k_cut: float
    tol: float
    skipped_bins: List[int] = field(default_factory=list)

    @property
    def max_deviation(self) -> float:
        checked = (self.k_centers > 0) & (self.k_centers < self.k_cut) & np.isfinite(self.ratio)
        if not checked.any():
            return 0.0
        return float(np.max(np.abs(self.ratio[checked] - 1.0)))


@dataclass(frozen=True)
class FftErrorPrediction:
    """Predicted distribution of each unnormalised FFT coefficient error component"""

    sigma_3d: float
    mu: float = 0.0
    confidence_2sigma: float = 0.9545


@dataclass(frozen=True)
class Halo:
    """One halo found on the density grid"""

    id: int
    cell_count: int
    mass: float  # Sum of member cell values
    centroid: Tuple[float, float, float]  # Unweighted mean member coordinate
    peak: float
    peak_index: int  # Linear index of the peak cell


@dataclass
class HaloCatalog:
    """Halos found with a given pair of thresholds"""

    halos: List[Halo]
    t_boundary: float
    t_halo: float

    def __len__(self) -> int:
        return len(self.halos)

    @property
    def total_mass(self) -> float:
        return math.fsum(h.mass for h in self.halos)


@dataclass
class FaultPrediction:
    """Predicted halo cell faults and fault mass for a set of error bounds"""

    e_m_list: np.ndarray  # Expected changed cells per partition
    mass_fault: float
    partition_sigma_cells: np.ndarray  # Normal-model sigma (cells) of each partition's count change


@dataclass(frozen=True)
class MatchedHalo:
    """An original halo paired with its reconstruction"""

    orig_id: int
    recon_id: int
    displacement: float
    orig_cells: int
    recon_cells: int
    orig_mass: float
    recon_mass: float

    @property
    def mass_ratio(self) -> float:
        return self.recon_mass / self.orig_mass if self.orig_mass else float("nan")

    @property
    def mass_diff_per_cell(self) -> float:
        delta_cells = self.recon_cells - self.orig_cells
        if delta_cells == 0:
            return float("nan")
        return abs(self.recon_mass - self.orig_mass) / abs(delta_cells)


@dataclass
class CatalogComparison:
    """Summary of matching two halo catalogs"""

    matched: List[MatchedHalo]
    unmatched_orig: List[int]
    unmatched_recon: List[int]
    mean_displacement: float
    max_displacement: float
    mass_ratio_rmse: float  # sqrt(mean((recon/orig)^2)) over matched halos above min_cells
    min_cells: int

    @property
    def count_change(self) -> int:
        return len(self.unmatched_recon) - len(self.unmatched_orig)

    @property
    def mass_error_rmse(self) -> float:
        """sqrt(mean((recon/orig - 1)^2)) over matched halos above min_cells"""
        ratios = [m.mass_ratio for m in self.matched if m.orig_cells >= self.min_cells]
        if not ratios:
            return float("nan")
        return float(np.sqrt(np.mean((np.asarray(ratios) - 1.0) ** 2)))


@dataclass
class PipelineConfig:
    """Everything a pipeline run needs; flags > config file > these defaults"""

    field_path: Optional[str] = None
    role: str = "baryon_density"
    synth_dims: Dims = (128, 128, 128)
    seed: int = 1
    block_dims: Dims = (32, 32, 32)
    t_boundary: float = 88.16
    t_halo: Optional[float] = None  # Defaults to 2 * t_boundary
    eb_avg: Optional[float] = None
    target_sigma: Optional[float] = None
    mass_fault_budget: Optional[float] = None
    strategy: Optional[str] = None  # Defaults to combined for baryon density, fft otherwise
    k_cut: Optional[float] = None  # Defaults to N / 8
    tol: float = 0.01
    rate_model_path: Optional[str] = None
    rate_mode: str = "model"  # model | measure
    key_feature: str = "mean"
    calibration_ebs: Tuple[float, ...] = (0.1, 0.2, 0.4, 0.7, 1.0)
    calibration_stride: int = 4
    connectivity: int = 6
    min_halo_cells: int = 10
    match_radius: float = 2.0
    fixed_global_mean: Optional[float] = None
    snapshots: Tuple[str, ...] = ()
    workers: int = 1
    output_dir: Optional[str] = None

    def resolved_t_halo(self) -> float:
        return self.t_halo if self.t_halo is not None else 2.0 * self.t_boundary

    def resolved_strategy(self) -> str:
        if self.strategy is not None:
            return self.strategy
        if self.role == "baryon_density" and self.mass_fault_budget is not None:
            return "combined"
        return "fft"


@dataclass(eq=False)
class ArchiveFile:
    """A whole compressed field: header, plan echo and one block per partition"""

    role: str
    field_dims: Dims
    block_dims: Dims
    ebs: np.ndarray
    blocks: List[CompressedBlock]
    measured_bitrate: float
    version: int = 1

    @property
    def M(self) -> int:
        return len(self.blocks)

    @property
    def ratio(self) -> float:
        return 32.0 / self.measured_bitrate if self.measured_bitrate > 0 else float("inf")
