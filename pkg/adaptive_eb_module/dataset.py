"""
Field store: raw field files, block partitioning and synthetic Nyx-like fields
"""

from dataclasses import dataclass, replace
import itertools
from pathlib import Path
import struct
from typing import Optional, Tuple

from loguru import logger
import numpy as np
import typer

from adaptive_eb_module.config import RAW_DATA_DIR
from adaptive_eb_module.errors import FieldFormatError, FieldLengthError, NonFiniteValueError
from adaptive_eb_module.models import (
    DENSITY_ROLES,
    ROLE_RANGES,
    VELOCITY_ROLES,
    Block,
    Dims,
    Field3D,
    PartitionSet,
)

app = typer.Typer()

FIELD_MAGIC = b"F3D1"
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sB3I")


def load_field(path: Path, expected_role: str = "generic") -> Field3D:
    """
    Read a raw field file

    Layout: 4-byte magic ``F3D1``, one dtype byte (0 = f32), three little-endian
    uint32 dims, then row-major little-endian float32 values.

    Parameters
    ----------
    path : Path
        Field file
    expected_role : str
        Role tag given to the returned field; selects the declared value range

    Returns
    -------
    Field3D
        Loaded field; ``diagnostics["out_of_range"]`` counts values outside the role range

    Raises
    ------
    FieldFormatError
        Bad magic or unknown dtype code
    FieldLengthError
        Payload shorter or longer than the declared dims
    NonFiniteValueError
        NaN or Inf in the payload, ``index`` is the first offending cell
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise OSError(f"Cannot read field file {path}: {e}") from e

    if len(raw) < _HEADER.size:
        raise FieldFormatError(f"{path}: file too short for a field header")
    magic, dtype_code, nx, ny, nz = _HEADER.unpack_from(raw, 0)
    if magic != FIELD_MAGIC:
        raise FieldFormatError(f"{path}: bad magic {magic!r}, expected {FIELD_MAGIC!r}")
    if dtype_code != DTYPE_F32:
        raise FieldFormatError(f"{path}: unsupported dtype code {dtype_code}")

    n_cells = nx * ny * nz
    payload = raw[_HEADER.size:]
    if len(payload) != 4 * n_cells:
        raise FieldLengthError(
            f"{path}: payload holds {len(payload) // 4} values, dims ({nx},{ny},{nz}) need {n_cells}"
        )

    values = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NonFiniteValueError(
            f"{path}: non-finite value at cell {bad[0]}", index=int(bad[0])
        )

    field = Field3D(
        name=expected_role,
        dims=(nx, ny, nz),
        values=values.reshape(nx, ny, nz),
        value_range=ROLE_RANGES[expected_role],
    )
    field.diagnostics["out_of_range"] = field.out_of_range_count()
    if field.diagnostics["out_of_range"]:
        logger.warning(
            f"{path}: {field.diagnostics['out_of_range']} values outside {field.value_range}"
        )
    logger.debug(f"Loaded {expected_role} field {field.dims} from {path}")
    return field


def save_field(field: Field3D, path: Path) -> None:
    """Write a field in the raw ``F3D1`` layout; load_field reproduces it bit-exactly"""
    path = Path(path)
    header = _HEADER.pack(FIELD_MAGIC, DTYPE_F32, *field.dims)
    payload = np.ascontiguousarray(field.values, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(payload)
    except OSError as e:
        raise OSError(f"Cannot write field file {path}: {e}") from e
    logger.debug(f"Saved {field.name} field {field.dims} to {path}")


def parse_block_dims(text: str) -> Dims:
    """Parse ``X,Y,Z`` (or a single ``N`` for a cube) into block dims"""
    parts = [p for p in text.replace("x", ",").split(",") if p.strip()]
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise ValueError(f"block dims must be integers, got {text!r}") from None
    if len(dims) == 1:
        dims = dims * 3
    if len(dims) != 3:
        raise ValueError(f"block dims need three values, got {text!r}")
    return dims


def partition_field(field: Field3D, block_dims: Dims) -> PartitionSet:
    """
    Tile a field into blocks

    Blocks are listed in C order of their grid position. When a block dim does not
    divide the field dim the last block along that axis is shorter.

    Parameters
    ----------
    field : Field3D
        Field to partition (only its dims are used)
    block_dims : Dims
        Block extent per axis, 1 <= block_i <= N_i

    Returns
    -------
    PartitionSet
        M = prod(ceil(N_i / block_i)) blocks

    Examples
    --------
    >>> partition_field(field_10cube, (4, 4, 4)).M
    27
    """
    return partition_dims(field.dims, block_dims)


def partition_dims(field_dims: Dims, block_dims: Dims) -> PartitionSet:
    """Tiling of a grid of ``field_dims``; see partition_field"""
    field_dims = tuple(int(n) for n in field_dims)
    block_dims = tuple(int(b) for b in block_dims)
    if len(block_dims) != 3:
        raise ValueError(f"block_dims needs three values, got {block_dims}")
    for axis, (n, b) in enumerate(zip(field_dims, block_dims)):
        if b < 1 or b > n:
            raise ValueError(f"block dim {b} on axis {axis} must lie in [1, {n}]")

    starts = [range(0, n, b) for n, b in zip(field_dims, block_dims)]
    blocks = []
    for origin in itertools.product(*starts):
        extent = tuple(min(b, n - o) for o, b, n in zip(origin, block_dims, field_dims))
        blocks.append(Block(origin=tuple(origin), extent=extent))

    return PartitionSet(field_dims=field_dims, block_dims=block_dims, blocks=blocks)


@dataclass(frozen=True)
class SynthesisSpec:
    """Parameters of a synthetic Nyx-like field"""

    role: str = "baryon_density"
    dims: Dims = (128, 128, 128)
    spectral_index: float = -3.0  # Power-law slope of the underlying Gaussian field
    log_sigma: float = 2.0  # Std of the log field (density / temperature)
    mean_level: float = 1.0  # Mean density, temperature scale or velocity amplitude
    white_fraction: float = 0.0  # Share of white noise mixed into the Gaussian field
    evolution_step: int = 0  # Snapshot index; each step sharpens the contrast

    @classmethod
    def heterogeneous(cls, role: str = "baryon_density", dims: Dims = (128, 128, 128)):
        """Default spec: strong large-scale modulation so partition means differ widely"""
        if role in DENSITY_ROLES:
            return cls(role=role, dims=dims)
        if role == "temperature":
            return cls(role=role, dims=dims, log_sigma=1.0, mean_level=1e4)
        if role in VELOCITY_ROLES:
            return cls(role=role, dims=dims, spectral_index=-3.5, mean_level=1e6)
        return cls(role=role, dims=dims, log_sigma=1.0, mean_level=1.0)

    @classmethod
    def smooth(cls, role: str = "generic", dims: Dims = (64, 64, 64)):
        """Gaussian field whose Lorenzo residuals are still much wider than small error bounds"""
        return cls(role=role, dims=dims, spectral_index=-3.0, log_sigma=1.0, mean_level=1.0)

    def evolved(self, step: int) -> "SynthesisSpec":
        return replace(self, evolution_step=step)


def gaussian_random_field(
    dims: Dims, spectral_index: float, rng: np.random.Generator, white_fraction: float = 0.0
) -> np.ndarray:
    """Zero-mean, unit-variance periodic Gaussian random field with P(k) ~ k**spectral_index"""
    white = rng.standard_normal(dims)
    spectrum = np.fft.rfftn(white)
    kx = np.fft.fftfreq(dims[0]) * dims[0]
    ky = np.fft.fftfreq(dims[1]) * dims[1]
    kz = np.fft.rfftfreq(dims[2]) * dims[2]
    k = np.sqrt(kx[:, None, None] ** 2 + ky[None, :, None] ** 2 + kz[None, None, :] ** 2)
    amplitude = np.zeros_like(k)
    nonzero = k > 0
    amplitude[nonzero] = k[nonzero] ** (spectral_index / 2.0)
    grf = np.fft.irfftn(spectrum * amplitude, s=dims)
    grf = (grf - grf.mean()) / grf.std()
    if white_fraction > 0:
        grf = np.sqrt(1 - white_fraction) * grf + np.sqrt(white_fraction) * rng.standard_normal(dims)
    return grf


def generate_synthetic(spec: SynthesisSpec, seed: int) -> Field3D:
    """
    Synthesize a field of the requested role

    - density: log-normal, ``mean_level * exp(s*g - s^2/2)``
    - temperature: shifted log-normal, ``100 + mean_level * exp(s*g)``
    - velocity: zero-mean Gaussian field scaled by ``mean_level``
    - generic: ``mean_level * g``

    ``evolution_step`` raises the log amplitude by 10% per step, mimicking structure
    sharpening as redshift decreases. Values are clipped to the role range.

    Parameters
    ----------
    spec : SynthesisSpec
        Role, dims and spectrum parameters
    seed : int
        Seed for ``numpy.random.default_rng``; output is a pure function of (spec, seed)

    Returns
    -------
    Field3D
        Synthetic field
    """
    if len(spec.dims) != 3 or any(d < 8 for d in spec.dims):
        raise ValueError(f"synthetic dims must be >= 8 per axis, got {spec.dims}")
    if spec.role not in ROLE_RANGES:
        raise ValueError(f"Unknown field role: {spec.role}")

    rng = np.random.default_rng(seed)
    g = gaussian_random_field(spec.dims, spec.spectral_index, rng, spec.white_fraction)
    s = spec.log_sigma * (1.0 + 0.1 * spec.evolution_step)

    if spec.role in DENSITY_ROLES:
        values = spec.mean_level * np.exp(s * g - 0.5 * s * s)
    elif spec.role == "temperature":
        values = 1e2 + spec.mean_level * np.exp(s * g)
    elif spec.role in VELOCITY_ROLES:
        values = spec.mean_level * (1.0 + 0.1 * spec.evolution_step) * g
    else:
        values = spec.mean_level * g

    lo, hi = ROLE_RANGES[spec.role]
    values = np.clip(values, lo, hi).astype(np.float32)
    logger.debug(f"Synthesized {spec.role} field {spec.dims} (seed={seed}, step={spec.evolution_step})")
    return Field3D(name=spec.role, dims=spec.dims, values=values, value_range=(lo, hi))


def synthesize_to_file(
    output_path: Path, role: str, dims: Dims, seed: int, step: int = 0, smooth: bool = False
) -> Field3D:
    """Generate a field with the heterogeneous (or smooth) defaults and save it"""
    spec = (SynthesisSpec.smooth(role, dims) if smooth else SynthesisSpec.heterogeneous(role, dims)).evolved(step)
    field = generate_synthetic(spec, seed)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    save_field(field, output_path)
    return field


@app.command()
def main(
    output_path: Path = RAW_DATA_DIR / "synthetic.f3d",
    role: str = "baryon_density",
    dims: str = "128,128,128",
    seed: int = 1,
    step: int = 0,
    smooth: bool = False,
):
    """Synthesize a field and write it as a raw F3D1 file"""
    field_dims: Tuple[int, int, int] = parse_block_dims(dims)
    logger.info(f"Synthesizing {role} field {field_dims} with seed {seed}...")
    synthesize_to_file(output_path, role, field_dims, seed, step, smooth)
    logger.success(f"Synthetic field saved to {output_path}")


def field_from_config(field_path: Optional[str], role: str, dims: Dims, seed: int, step: int = 0):
    """Load ``field_path`` when given, otherwise synthesize a heterogeneous field"""
    if field_path:
        return load_field(Path(field_path), expected_role=role)
    return generate_synthetic(SynthesisSpec.heterogeneous(role, dims).evolved(step), seed)


if __name__ == "__main__":
    app()
