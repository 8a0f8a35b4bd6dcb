import struct

import numpy as np
import pytest

from adaptive_eb_module.dataset import (
    FIELD_MAGIC,
    SynthesisSpec,
    field_from_config,
    generate_synthetic,
    load_field,
    parse_block_dims,
    partition_dims,
    partition_field,
    save_field,
)
from adaptive_eb_module.errors import FieldFormatError, FieldLengthError, NonFiniteValueError
from adaptive_eb_module.models import ROLE_RANGES, Field3D


def _raw(dims, values, magic=FIELD_MAGIC, dtype=0):
    return struct.pack("<4sB3I", magic, dtype, *dims) + np.asarray(values, dtype="<f4").tobytes()


def test_save_load_is_bit_exact(tmp_path, density_32):
    path = tmp_path / "density.f3d"
    save_field(density_32, path)
    loaded = load_field(path, expected_role="baryon_density")
    assert loaded.dims == (32, 32, 32)
    assert loaded.values.tobytes() == density_32.values.tobytes()
    assert loaded.diagnostics["out_of_range"] == 0


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.f3d"
    path.write_bytes(_raw((2, 2, 2), np.zeros(8), magic=b"XXXX"))
    with pytest.raises(FieldFormatError):
        load_field(path)


def test_load_rejects_unknown_dtype(tmp_path):
    path = tmp_path / "f64.f3d"
    path.write_bytes(_raw((2, 2, 2), np.zeros(8), dtype=1))
    with pytest.raises(FieldFormatError):
        load_field(path)


def test_load_rejects_short_payload(tmp_path):
    path = tmp_path / "short.f3d"
    path.write_bytes(_raw((2, 2, 2), np.zeros(7)))
    with pytest.raises(FieldLengthError):
        load_field(path)


def test_load_reports_first_non_finite_cell(tmp_path):
    values = np.ones(8)
    values[5] = np.nan
    values[6] = np.inf
    path = tmp_path / "nan.f3d"
    path.write_bytes(_raw((2, 2, 2), values))
    with pytest.raises(NonFiniteValueError) as info:
        load_field(path)
    assert info.value.index == 5


def test_out_of_range_values_are_counted_not_rejected(tmp_path):
    values = np.ones(8)
    values[0] = -3.0
    path = tmp_path / "neg.f3d"
    path.write_bytes(_raw((2, 2, 2), values))
    field = load_field(path, expected_role="baryon_density")
    assert field.diagnostics["out_of_range"] == 1
    assert field.values[0, 0, 0] == -3.0


def test_field_rejects_unknown_role():
    with pytest.raises(ValueError):
        Field3D(name="pressure", dims=(2, 2, 2), values=np.zeros(8), value_range=(0, 1))


def test_partition_uneven_tiling():
    pset = partition_dims((10, 10, 10), (4, 4, 4))
    assert pset.M == 27
    assert pset.grid_shape == (3, 3, 3)
    assert pset.cell_counts().sum() == 1000
    assert pset.blocks[0].origin == (0, 0, 0)
    assert pset.blocks[1].origin == (0, 0, 4)
    assert pset.blocks[-1].extent == (2, 2, 2)


def test_partition_single_block_and_single_cells(density_32):
    assert partition_field(density_32, (32, 32, 32)).M == 1
    assert partition_dims((4, 4, 4), (1, 1, 1)).M == 64


@pytest.mark.parametrize("block_dims", [(0, 4, 4), (4, 4, 40), (4, 4)])
def test_partition_rejects_bad_block_dims(block_dims):
    with pytest.raises(ValueError):
        partition_dims((32, 32, 32), block_dims)


def test_parse_block_dims():
    assert parse_block_dims("32") == (32, 32, 32)
    assert parse_block_dims("4,8,16") == (4, 8, 16)
    assert parse_block_dims("16x16x8") == (16, 16, 8)
    with pytest.raises(ValueError):
        parse_block_dims("4,8")
    with pytest.raises(ValueError):
        parse_block_dims("a,b,c")


def test_synthesis_is_a_pure_function_of_seed():
    spec = SynthesisSpec.heterogeneous("baryon_density", (16, 16, 16))
    a = generate_synthetic(spec, seed=11)
    b = generate_synthetic(spec, seed=11)
    c = generate_synthetic(spec, seed=12)
    assert a.values.tobytes() == b.values.tobytes()
    assert not np.array_equal(a.values, c.values)


@pytest.mark.parametrize("role", sorted(ROLE_RANGES))
def test_synthesis_respects_role_range(role):
    field = generate_synthetic(SynthesisSpec.heterogeneous(role, (16, 16, 16)), seed=5)
    lo, hi = ROLE_RANGES[role]
    assert field.name == role
    assert field.values.dtype == np.float32
    assert np.all(np.isfinite(field.values))
    assert field.values.min() >= lo and field.values.max() <= hi


def test_density_is_positive_and_log_normal(density_32):
    assert density_32.values.min() > 0
    log_values = np.log(density_32.values.astype(np.float64))
    assert log_values.std() == pytest.approx(2.0, rel=1e-4)


def test_heterogeneous_density_partition_means_spread_tenfold():
    field = generate_synthetic(SynthesisSpec.heterogeneous("baryon_density", (128, 128, 128)), seed=1)
    pset = partition_field(field, (32, 32, 32))
    means = np.array([np.abs(field.values[b.slices].astype(np.float64)).mean() for b in pset.blocks])
    assert pset.M == 64
    assert means.max() / means.min() >= 10.0


def test_evolution_sharpens_log_contrast():
    spec = SynthesisSpec.heterogeneous("baryon_density", (32, 32, 32))
    early = generate_synthetic(spec, seed=2)
    late = generate_synthetic(spec.evolved(2), seed=2)
    ratio = np.log(late.values.astype(np.float64)).std() / np.log(early.values.astype(np.float64)).std()
    assert ratio == pytest.approx(1.2, rel=1e-3)


def test_synthesis_rejects_tiny_dims():
    with pytest.raises(ValueError):
        generate_synthetic(SynthesisSpec.heterogeneous("generic", (4, 16, 16)), seed=1)


def test_field_from_config_prefers_a_path(tmp_path, density_32):
    path = tmp_path / "f.f3d"
    save_field(density_32, path)
    loaded = field_from_config(str(path), "baryon_density", (16, 16, 16), seed=99)
    assert loaded.dims == (32, 32, 32)
    synthesized = field_from_config(None, "temperature", (16, 16, 16), seed=99)
    assert synthesized.name == "temperature"
    assert synthesized.dims == (16, 16, 16)
