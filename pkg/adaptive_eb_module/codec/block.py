"""
Error-bounded block compressor

Pipeline per block: Lorenzo prediction on reconstructed values, linear-scaling
quantization, zero-run folding, canonical Huffman coding, verbatim outliers.

Wire layout of one block (all little-endian):

    header   "<4sd3IIQI"  magic ADB1, eb, nx, ny, nz, n_outliers, encoded_bits, crc32
    codebook u8 max_len, max_len x u32 counts, sum(counts) x u32 symbols
    payload  ceil(encoded_bits / 8) bytes
    outliers n_outliers x u32 cell index, then n_outliers x f32 value

The CRC32 covers the header (with the checksum slot zeroed) and everything after it.
"""

from concurrent.futures import ThreadPoolExecutor
import struct
from typing import List, Sequence, Tuple
import zlib

from loguru import logger
import numpy as np

from adaptive_eb_module.codec.huffman import huffman_decode, huffman_encode
from adaptive_eb_module.codec.lorenzo import (
    OUTLIER_SYMBOL,
    QUANT_RADIUS,
    alphabet_size,
    expand_runs,
    lorenzo_quantize,
    lorenzo_reconstruct,
    tokenize_runs,
)
from adaptive_eb_module.errors import DecodeError, ErrorBoundViolation
from adaptive_eb_module.models import CompressedBlock, Field3D, PartitionSet

BLOCK_MAGIC = b"ADB1"
_HEADER = struct.Struct("<4sd3IIQI")


def compress_block(values: np.ndarray, eb: float) -> CompressedBlock:
    """
    Compress one 3-D block with an absolute error bound

    Parameters
    ----------
    values : np.ndarray
        3-D cell array, cast to float32
    eb : float
        Absolute error bound, > 0

    Returns
    -------
    CompressedBlock
        Self-describing block; decompress_block(block) stays within ``eb`` of ``values``
    """
    if not eb > 0 or not np.isfinite(eb):
        raise ValueError(f"eb must be a positive finite number, got {eb}")
    values = np.ascontiguousarray(values, dtype=np.float32)
    if values.ndim != 3:
        raise ValueError(f"compress_block expects a 3-D array, got shape {values.shape}")
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ValueError(f"non-finite input value at cell {bad[0]}")

    symbols, _ = lorenzo_quantize(values, eb)
    outlier_indices = np.flatnonzero(symbols == OUTLIER_SYMBOL).astype(np.uint32)
    outlier_values = values.ravel()[outlier_indices].astype(np.float32)

    tokens = tokenize_runs(symbols)
    counts, sorted_symbols, payload, n_bits = huffman_encode(tokens, alphabet_size())

    block = CompressedBlock(
        eb=float(eb),
        dims=tuple(int(d) for d in values.shape),
        codebook_counts=counts.astype(np.uint32),
        codebook_symbols=sorted_symbols.astype(np.uint32),
        quant_payload=payload,
        outlier_indices=outlier_indices,
        outlier_values=outlier_values,
        encoded_bits=n_bits,
    )
    block.checksum = _checksum(block)
    return block


def decompress_block(block: CompressedBlock) -> np.ndarray:
    """
    Rebuild the float32 cell array of a block

    Raises
    ------
    DecodeError
        Codebook, payload or outlier list is inconsistent
    """
    try:
        tokens = huffman_decode(
            block.quant_payload, block.encoded_bits, block.codebook_counts, block.codebook_symbols
        )
        symbols = expand_runs(tokens, block.cell_count)
    except ValueError as e:
        raise DecodeError(f"corrupted quantization stream: {e}") from e

    outlier_slots = np.flatnonzero(symbols == OUTLIER_SYMBOL)
    if outlier_slots.size != len(block.outlier_indices) or not np.array_equal(
        outlier_slots, np.asarray(block.outlier_indices, dtype=np.int64)
    ):
        raise DecodeError("outlier indices disagree with the quantization stream")
    if np.any(symbols >= 2 * QUANT_RADIUS):
        raise DecodeError("quantization code outside the radius")
    try:
        recon = lorenzo_reconstruct(symbols, block.outlier_values, block.dims, block.eb)
    except ValueError as e:
        raise DecodeError(f"corrupted block: {e}") from e
    return recon


def _body_bytes(block: CompressedBlock) -> bytes:
    counts = np.asarray(block.codebook_counts, dtype="<u4")
    parts = [
        struct.pack("<B", len(counts)),
        counts.tobytes(),
        np.asarray(block.codebook_symbols, dtype="<u4").tobytes(),
        bytes(block.quant_payload),
        np.asarray(block.outlier_indices, dtype="<u4").tobytes(),
        np.asarray(block.outlier_values, dtype="<f4").tobytes(),
    ]
    return b"".join(parts)


def _header_bytes(block: CompressedBlock, checksum: int) -> bytes:
    return _HEADER.pack(
        BLOCK_MAGIC,
        block.eb,
        *block.dims,
        len(block.outlier_indices),
        block.encoded_bits,
        checksum,
    )


def _checksum(block: CompressedBlock) -> int:
    return zlib.crc32(_header_bytes(block, 0) + _body_bytes(block)) & 0xFFFFFFFF


def block_to_bytes(block: CompressedBlock) -> bytes:
    """Serialise a block in the ADB1 wire layout"""
    return _header_bytes(block, block.checksum) + _body_bytes(block)


def block_from_bytes(data: bytes) -> Tuple[CompressedBlock, int]:
    """
    Parse one ADB1 block

    Parameters
    ----------
    data : bytes
        Buffer starting at a block; may extend past it

    Returns
    -------
    (CompressedBlock, int)
        The block and the number of bytes it occupies

    Raises
    ------
    DecodeError
        Bad magic, truncated buffer, invalid codebook or checksum mismatch
    """
    data = memoryview(bytes(data))
    if len(data) < _HEADER.size:
        raise DecodeError("buffer too short for a block header")
    magic, eb, nx, ny, nz, n_outliers, n_bits, checksum = _HEADER.unpack_from(data, 0)
    if magic != BLOCK_MAGIC:
        raise DecodeError(f"bad block magic {bytes(magic)!r}")
    if not (eb > 0 and np.isfinite(eb)) or min(nx, ny, nz) == 0:
        raise DecodeError("invalid block header")

    pos = _HEADER.size

    def take(n: int) -> bytes:
        nonlocal pos
        if n < 0 or pos + n > len(data):
            raise DecodeError("block truncated")
        chunk = bytes(data[pos : pos + n])
        pos += n
        return chunk

    max_len = take(1)[0]
    if max_len == 0:
        raise DecodeError("empty codebook")
    counts = np.frombuffer(take(4 * max_len), dtype="<u4").astype(np.uint32)
    n_symbols = int(counts.astype(np.int64).sum())
    if n_symbols > alphabet_size():
        raise DecodeError("codebook lists more symbols than the alphabet holds")
    symbols = np.frombuffer(take(4 * n_symbols), dtype="<u4").astype(np.uint32)
    if symbols.size and int(symbols.max()) >= alphabet_size():
        raise DecodeError("codebook symbol outside the alphabet")
    payload = take((n_bits + 7) // 8)
    outlier_indices = np.frombuffer(take(4 * n_outliers), dtype="<u4").astype(np.uint32)
    outlier_values = np.frombuffer(take(4 * n_outliers), dtype="<f4").astype(np.float32)

    block = CompressedBlock(
        eb=float(eb),
        dims=(nx, ny, nz),
        codebook_counts=counts,
        codebook_symbols=symbols,
        quant_payload=payload,
        outlier_indices=outlier_indices,
        outlier_values=outlier_values,
        encoded_bits=int(n_bits),
        checksum=int(checksum),
    )
    if _checksum(block) != checksum:
        raise DecodeError("block checksum mismatch")
    return block, pos


def encoded_size(block: CompressedBlock) -> int:
    """Serialised size of a block in bytes"""
    return (
        _HEADER.size
        + 1
        + 4 * len(block.codebook_counts)
        + 4 * len(block.codebook_symbols)
        + (block.encoded_bits + 7) // 8
        + 8 * len(block.outlier_indices)
    )


def measure_bitrate(block: CompressedBlock) -> float:
    """Bits per value including header, codebook, payload and outliers"""
    return 8.0 * encoded_size(block) / block.cell_count


def compression_ratio(bitrate: float) -> float:
    """Ratio for single-precision input"""
    return 32.0 / bitrate if bitrate > 0 else float("inf")


def error_histogram(
    orig: np.ndarray, recon: np.ndarray, eb: float, bins: int = 100
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Histogram of ``recon - orig`` over [-eb, eb]

    Parameters
    ----------
    orig, recon : np.ndarray
        Arrays of the same shape
    eb : float
        Error bound the reconstruction was produced with
    bins : int
        Number of uniform bins

    Returns
    -------
    (np.ndarray, np.ndarray)
        Counts and the ``bins + 1`` bin edges

    Raises
    ------
    ErrorBoundViolation
        Some difference lies outside [-eb, eb]
    """
    orig = np.asarray(orig)
    recon = np.asarray(recon)
    if orig.shape != recon.shape:
        raise ValueError(f"shape mismatch: {orig.shape} vs {recon.shape}")
    if eb <= 0:
        raise ValueError(f"eb must be positive, got {eb}")
    diff = recon.astype(np.float64) - orig.astype(np.float64)
    worst = float(np.max(np.abs(diff))) if diff.size else 0.0
    if worst > eb:
        raise ErrorBoundViolation(f"reconstruction error {worst:.6g} exceeds eb {eb:.6g}")
    counts, edges = np.histogram(diff, bins=bins, range=(-eb, eb))
    return counts, edges


def compress_partitions(
    field: Field3D, pset: PartitionSet, ebs: Sequence[float], workers: int = 1
) -> List[CompressedBlock]:
    """Compress every partition of a field with its own error bound"""
    if len(ebs) != pset.M:
        raise ValueError(f"plan has {len(ebs)} error bounds, partition set has {pset.M} blocks")

    def task(item):
        block, eb = item
        return compress_block(field.values[block.slices], float(eb))

    items = list(zip(pset.blocks, ebs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            compressed = list(pool.map(task, items))
    else:
        compressed = [task(item) for item in items]
    logger.debug(f"Compressed {len(compressed)} partitions")
    return compressed


def decompress_partitions(
    blocks: Sequence[CompressedBlock], pset: PartitionSet, workers: int = 1
) -> np.ndarray:
    """Reassemble a float32 field from its compressed partitions"""
    if len(blocks) != pset.M:
        raise ValueError(f"{len(blocks)} blocks given, partition set has {pset.M}")
    out = np.empty(pset.field_dims, dtype=np.float32)

    def task(item):
        part, block = item
        if tuple(block.dims) != tuple(part.extent):
            raise DecodeError(f"block dims {block.dims} do not match partition {part.extent}")
        out[part.slices] = decompress_block(block)

    items = list(zip(pset.blocks, blocks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(task, items))
    else:
        for item in items:
            task(item)
    return out


def total_bitrate(blocks: Sequence[CompressedBlock]) -> float:
    """Bits per value over a set of blocks"""
    cells = sum(b.cell_count for b in blocks)
    return 8.0 * sum(encoded_size(b) for b in blocks) / cells
