import numpy as np
import pytest

from adaptive_eb_module.codec import (
    block_from_bytes,
    block_to_bytes,
    compress_block,
    compress_partitions,
    compression_ratio,
    decompress_block,
    decompress_partitions,
    encoded_size,
    error_histogram,
    measure_bitrate,
    total_bitrate,
)
from adaptive_eb_module.codec.lorenzo import (
    QUANT_RADIUS,
    expand_runs,
    lorenzo_quantize,
    lorenzo_reconstruct,
    run_base,
    tokenize_runs,
    zero_symbol,
)
from adaptive_eb_module.dataset import partition_field
from adaptive_eb_module.errors import DecodeError, ErrorBoundViolation


@pytest.mark.parametrize("eb", [1e-3, 0.05, 0.5])
def test_error_bound_holds_on_smooth_data(smooth_32, eb):
    values = smooth_32.values[:16, :16, :16]
    recon = decompress_block(compress_block(values, eb))
    assert recon.dtype == np.float32
    assert np.max(np.abs(recon.astype(np.float64) - values)) <= eb


def test_error_bound_holds_on_heavy_tailed_density(density_32):
    eb = 0.01
    recon = decompress_block(compress_block(density_32.values, eb))
    assert np.max(np.abs(recon.astype(np.float64) - density_32.values)) <= eb


def test_wide_residuals_become_exact_outliers(rng):
    values = (rng.standard_normal((8, 8, 8)) * 1e6).astype(np.float32)
    block = compress_block(values, 1e-3)
    assert len(block.outlier_indices) > 0
    recon = decompress_block(block)
    outliers = block.outlier_indices.astype(np.int64)
    np.testing.assert_array_equal(recon.ravel()[outliers], values.ravel()[outliers])
    assert np.max(np.abs(recon.astype(np.float64) - values)) <= 1e-3


def test_constant_block_compresses_to_almost_nothing():
    values = np.full((16, 16, 16), 5.0, dtype=np.float32)
    block = compress_block(values, 0.1)
    assert len(block.outlier_indices) == 0
    assert measure_bitrate(block) < 0.5
    np.testing.assert_allclose(decompress_block(block), values, atol=0.1)


def test_larger_error_bound_gives_smaller_stream(smooth_32):
    values = smooth_32.values[:16, :16, :16]
    sizes = [encoded_size(compress_block(values, eb)) for eb in (0.001, 0.01, 0.1)]
    assert sizes[0] > sizes[1] > sizes[2]


def test_compression_is_deterministic(smooth_32):
    values = smooth_32.values[:16, :16, :16]
    assert block_to_bytes(compress_block(values, 0.02)) == block_to_bytes(compress_block(values, 0.02))


@pytest.mark.parametrize("eb", [0.02, 0.2])
def test_recompressing_a_reconstruction_is_byte_identical(smooth_32, eb):
    values = smooth_32.values[:16, :16, :16]
    first = block_to_bytes(compress_block(values, eb))
    recon = decompress_block(block_from_bytes(first)[0])
    assert block_to_bytes(compress_block(recon, eb)) == first


def test_linear_ramp_has_zero_interior_residuals():
    i, j, k = np.indices((12, 12, 12))
    values = (i + 2 * j + 3 * k).astype(np.float32)
    symbols, recon = lorenzo_quantize(values, 0.5)
    interior = symbols.reshape(values.shape)[1:, 1:, 1:]
    assert np.all(interior == zero_symbol())
    np.testing.assert_array_equal(recon, values)


def test_lorenzo_reconstruction_matches_compressor_view(smooth_32):
    values = smooth_32.values[:8, :8, :8]
    symbols, recon = lorenzo_quantize(values, 0.01)
    outliers = values.ravel()[symbols == 0]
    np.testing.assert_array_equal(lorenzo_reconstruct(symbols, outliers, values.shape, 0.01), recon)


def test_zero_runs_fold_into_power_of_two_tokens():
    zero, base = zero_symbol(), run_base()
    symbols = np.array([zero + 3] + [zero] * 5 + [zero - 1], dtype=np.int32)
    tokens = tokenize_runs(symbols)
    np.testing.assert_array_equal(tokens, [zero + 3, base + 2, zero, zero - 1])
    np.testing.assert_array_equal(expand_runs(tokens, symbols.size), symbols)


def test_expand_runs_rejects_short_and_long_streams():
    tokens = tokenize_runs(np.full(6, zero_symbol(), dtype=np.int32))
    with pytest.raises(ValueError):
        expand_runs(tokens, 7)
    with pytest.raises(ValueError):
        expand_runs(tokens, 5)


def test_block_bytes_round_trip(smooth_32):
    block = compress_block(smooth_32.values[:16, :16, :8], 0.01)
    data = block_to_bytes(block)
    assert len(data) == encoded_size(block)
    parsed, used = block_from_bytes(data + b"trailing")
    assert used == len(data)
    assert parsed.dims == (16, 16, 8)
    assert parsed.eb == 0.01
    np.testing.assert_array_equal(decompress_block(parsed), decompress_block(block))


def test_corrupted_block_is_detected(smooth_32):
    data = bytearray(block_to_bytes(compress_block(smooth_32.values[:8, :8, :8], 0.01)))
    data[len(data) // 2] ^= 0x10
    with pytest.raises(DecodeError):
        block_from_bytes(bytes(data))


def test_bad_magic_and_truncation_are_detected(smooth_32):
    data = block_to_bytes(compress_block(smooth_32.values[:8, :8, :8], 0.01))
    with pytest.raises(DecodeError):
        block_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(DecodeError):
        block_from_bytes(data[: len(data) - 3])
    with pytest.raises(DecodeError):
        block_from_bytes(data[:10])


def test_inconsistent_outlier_list_is_detected(rng):
    values = (rng.standard_normal((4, 4, 4)) * 1e6).astype(np.float32)
    block = compress_block(values, 1e-3)
    block.outlier_indices = block.outlier_indices[1:]
    block.outlier_values = block.outlier_values[1:]
    with pytest.raises(DecodeError):
        decompress_block(block)


@pytest.mark.parametrize("eb", [0.0, -1.0, float("nan"), float("inf")])
def test_compress_rejects_bad_error_bound(eb):
    with pytest.raises(ValueError):
        compress_block(np.zeros((4, 4, 4), dtype=np.float32), eb)


def test_compress_rejects_non_finite_and_flat_input():
    values = np.zeros((4, 4, 4), dtype=np.float32)
    values[1, 2, 3] = np.nan
    with pytest.raises(ValueError):
        compress_block(values, 0.1)
    with pytest.raises(ValueError):
        compress_block(np.zeros((4, 4), dtype=np.float32), 0.1)


def test_error_histogram_counts_every_cell(smooth_32):
    values = smooth_32.values[:16, :16, :16]
    recon = decompress_block(compress_block(values, 0.05))
    counts, edges = error_histogram(values, recon, 0.05)
    assert counts.sum() == values.size
    assert len(edges) == 101
    assert edges[0] == -0.05 and edges[-1] == 0.05


def test_error_histogram_flags_violations():
    orig = np.zeros(10)
    recon = np.zeros(10)
    recon[3] = 0.2
    with pytest.raises(ErrorBoundViolation):
        error_histogram(orig, recon, 0.1)
    with pytest.raises(ValueError):
        error_histogram(orig, recon[:5], 0.1)


def test_partitioned_compression_honours_each_bound(density_32):
    pset = partition_field(density_32, (16, 16, 16))
    ebs = np.linspace(0.01, 0.08, pset.M)
    blocks = compress_partitions(density_32, pset, ebs, workers=4)
    recon = decompress_partitions(blocks, pset, workers=4)
    for block, eb in zip(pset.blocks, ebs):
        diff = recon[block.slices].astype(np.float64) - density_32.values[block.slices]
        assert np.max(np.abs(diff)) <= eb
    sequential = compress_partitions(density_32, pset, ebs)
    assert [block_to_bytes(b) for b in blocks] == [block_to_bytes(b) for b in sequential]
    assert total_bitrate(blocks) == pytest.approx(
        8.0 * sum(encoded_size(b) for b in blocks) / density_32.cell_count
    )


def test_partitioned_compression_needs_one_bound_per_partition(density_32):
    pset = partition_field(density_32, (16, 16, 16))
    with pytest.raises(ValueError):
        compress_partitions(density_32, pset, [0.1] * (pset.M - 1))


def test_compression_ratio_of_single_precision():
    assert compression_ratio(2.0) == 16.0
    assert compression_ratio(0.0) == float("inf")
    assert QUANT_RADIUS == 2**15
