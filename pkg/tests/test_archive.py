from dataclasses import replace

import numpy as np
import pytest

from adaptive_eb_module.archive import (
    archive_from_bytes,
    archive_to_bytes,
    cmd_compress,
    cmd_decompress,
    read_archive,
)
from adaptive_eb_module.codec import encoded_size
from adaptive_eb_module.dataset import partition_field
from adaptive_eb_module.errors import DecodeError
from adaptive_eb_module.processing import plan_uniform


@pytest.fixture
def density_pset(density_32):
    return partition_field(density_32, (16, 16, 16))


@pytest.fixture
def archive(density_32, density_pset):
    plan = plan_uniform(0.02, density_pset.M)
    plan.ebs = np.linspace(0.01, 0.04, density_pset.M)
    return cmd_compress(density_32, density_pset, plan)


def test_archive_round_trip(tmp_path, density_32, density_pset, archive):
    path = tmp_path / "field.adlc"
    plan = plan_uniform(0.02, density_pset.M)
    plan.ebs = archive.ebs.copy()
    cmd_compress(density_32, density_pset, plan, path=path, workers=2)
    loaded = read_archive(path)
    assert loaded.role == "baryon_density"
    assert loaded.field_dims == (32, 32, 32)
    assert loaded.block_dims == (16, 16, 16)
    np.testing.assert_array_equal(loaded.ebs, archive.ebs)
    assert loaded.measured_bitrate == archive.measured_bitrate

    recon = cmd_decompress(path)
    assert recon.name == "baryon_density"
    for block, eb in zip(density_pset.blocks, loaded.ebs):
        diff = recon.values[block.slices].astype(np.float64) - density_32.values[block.slices]
        assert np.max(np.abs(diff)) <= eb


def test_measured_bitrate_counts_whole_blocks(density_32, archive):
    total = sum(encoded_size(b) for b in archive.blocks)
    assert archive.measured_bitrate == pytest.approx(8.0 * total / density_32.cell_count)
    assert archive.ratio == pytest.approx(32.0 / archive.measured_bitrate)


def test_archive_bytes_are_deterministic(density_32, density_pset, archive):
    plan = plan_uniform(0.02, density_pset.M)
    plan.ebs = archive.ebs.copy()
    again = cmd_compress(density_32, density_pset, plan, workers=4)
    assert archive_to_bytes(again) == archive_to_bytes(archive)


def test_corruption_is_detected(archive):
    data = bytearray(archive_to_bytes(archive))
    data[len(data) // 3] ^= 0x01
    with pytest.raises(DecodeError):
        archive_from_bytes(bytes(data))
    with pytest.raises(DecodeError):
        archive_from_bytes(b"ADLC")


def test_plan_echo_must_match_blocks(archive):
    tampered = replace(archive, ebs=archive.ebs * 2.0)
    with pytest.raises(DecodeError, match="plan echo"):
        archive_from_bytes(archive_to_bytes(tampered))


def test_block_count_must_match_geometry(archive):
    tampered = replace(archive, ebs=archive.ebs[:-1], blocks=archive.blocks[:-1])
    with pytest.raises(DecodeError):
        archive_from_bytes(archive_to_bytes(tampered))


def test_plan_must_fit_the_partition_set(density_32, density_pset):
    with pytest.raises(ValueError):
        cmd_compress(density_32, density_pset, plan_uniform(0.02, density_pset.M + 1))


def test_missing_archive_is_an_os_error(tmp_path):
    with pytest.raises(OSError):
        read_archive(tmp_path / "absent.adlc")
