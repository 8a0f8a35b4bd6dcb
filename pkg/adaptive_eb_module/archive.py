"""
Whole-field archives: one compressed block per partition plus the plan echo

Layout (little-endian):

    "<4sHB"            magic ADLC, version, role name length
    role               UTF-8 role name
    "<3I3IId"          field dims, block dims, M, measured bitrate
    M x f64            planned error bound per partition
    M x u64, M x u32   block offsets (from the start of the block area) and lengths
    blocks             ADB1 blocks in partition order
    u32                CRC32 of everything before it
"""

from pathlib import Path
import struct
from typing import Optional
import zlib

from loguru import logger
import numpy as np

from adaptive_eb_module.codec import (
    block_from_bytes,
    block_to_bytes,
    compress_partitions,
    decompress_partitions,
    total_bitrate,
)
from adaptive_eb_module.dataset import partition_dims
from adaptive_eb_module.errors import DecodeError
from adaptive_eb_module.models import ROLE_RANGES, ArchiveFile, CompressionPlan, Field3D, PartitionSet

ARCHIVE_MAGIC = b"ADLC"
ARCHIVE_VERSION = 1
_PREFIX = struct.Struct("<4sHB")
_GEOMETRY = struct.Struct("<3I3IId")


def archive_to_bytes(archive: ArchiveFile) -> bytes:
    role = archive.role.encode("utf-8")
    blobs = [block_to_bytes(b) for b in archive.blocks]
    lengths = np.array([len(b) for b in blobs], dtype="<u4")
    offsets = np.zeros(len(blobs), dtype="<u8")
    offsets[1:] = np.cumsum(lengths[:-1], dtype=np.uint64)
    head = b"".join(
        [
            _PREFIX.pack(ARCHIVE_MAGIC, archive.version, len(role)),
            role,
            _GEOMETRY.pack(*archive.field_dims, *archive.block_dims, archive.M, archive.measured_bitrate),
            np.asarray(archive.ebs, dtype="<f8").tobytes(),
            offsets.tobytes(),
            lengths.tobytes(),
        ]
    )
    body = head + b"".join(blobs)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def archive_from_bytes(data: bytes) -> ArchiveFile:
    """
    Parse and validate an archive

    Raises
    ------
    DecodeError
        Bad magic or version, truncation, checksum mismatch, or a block whose error
        bound or dims disagree with the header
    """
    if len(data) < _PREFIX.size + _GEOMETRY.size + 4:
        raise DecodeError("archive too short")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise DecodeError("archive checksum mismatch")

    magic, version, role_len = _PREFIX.unpack_from(body, 0)
    if magic != ARCHIVE_MAGIC:
        raise DecodeError(f"bad archive magic {magic!r}")
    if version != ARCHIVE_VERSION:
        raise DecodeError(f"unsupported archive version {version}")
    pos = _PREFIX.size
    role = body[pos : pos + role_len].decode("utf-8", errors="replace")
    if role not in ROLE_RANGES:
        raise DecodeError(f"unknown role {role!r} in archive")
    pos += role_len
    *dims, M, bitrate = _GEOMETRY.unpack_from(body, pos)
    pos += _GEOMETRY.size
    field_dims, block_dims = tuple(dims[:3]), tuple(dims[3:])

    table_end = pos + 20 * M
    if table_end > len(body):
        raise DecodeError("archive truncated in the plan table")
    ebs = np.frombuffer(body, dtype="<f8", count=M, offset=pos).astype(np.float64)
    offsets = np.frombuffer(body, dtype="<u8", count=M, offset=pos + 8 * M)
    lengths = np.frombuffer(body, dtype="<u4", count=M, offset=pos + 16 * M)

    try:
        pset = partition_dims(field_dims, block_dims)
    except ValueError as e:
        raise DecodeError(f"invalid archive geometry: {e}") from e
    if pset.M != M:
        raise DecodeError(f"archive lists {M} blocks, geometry implies {pset.M}")

    blocks = []
    for m in range(M):
        start = table_end + int(offsets[m])
        end = start + int(lengths[m])
        if end > len(body):
            raise DecodeError(f"block {m} runs past the end of the archive")
        block, used = block_from_bytes(body[start:end])
        if used != lengths[m]:
            raise DecodeError(f"block {m} length does not match the offset table")
        if block.eb != ebs[m]:
            raise DecodeError(f"block {m} eb {block.eb} differs from the plan echo {ebs[m]}")
        if tuple(block.dims) != tuple(pset.blocks[m].extent):
            raise DecodeError(f"block {m} dims {block.dims} differ from the partition extent")
        blocks.append(block)

    return ArchiveFile(
        role=role,
        field_dims=field_dims,
        block_dims=block_dims,
        ebs=ebs,
        blocks=blocks,
        measured_bitrate=float(bitrate),
        version=version,
    )


def write_archive(archive: ArchiveFile, path: Path) -> None:
    path = Path(path)
    try:
        path.write_bytes(archive_to_bytes(archive))
    except OSError as e:
        raise OSError(f"Cannot write archive {path}: {e}") from e


def read_archive(path: Path) -> ArchiveFile:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise OSError(f"Cannot read archive {path}: {e}") from e
    return archive_from_bytes(data)


def cmd_compress(
    field: Field3D,
    pset: PartitionSet,
    plan: CompressionPlan,
    path: Optional[Path] = None,
    workers: int = 1,
) -> ArchiveFile:
    """
    Compress a field with one error bound per partition

    The archive is written to ``path`` when given. Its measured bitrate counts every
    block byte (headers, codebooks, payloads and outliers).
    """
    if plan.M != pset.M:
        raise ValueError(f"plan has {plan.M} error bounds, field has {pset.M} partitions")
    if tuple(pset.field_dims) != tuple(field.dims):
        raise ValueError(f"partition set is for {pset.field_dims}, field is {field.dims}")
    blocks = compress_partitions(field, pset, plan.ebs, workers)
    archive = ArchiveFile(
        role=field.name,
        field_dims=field.dims,
        block_dims=pset.block_dims,
        ebs=np.asarray(plan.ebs, dtype=np.float64),
        blocks=blocks,
        measured_bitrate=total_bitrate(blocks),
    )
    if path is not None:
        write_archive(archive, path)
        logger.debug(f"Wrote archive {path} (ratio {archive.ratio:.2f})")
    return archive


def cmd_decompress(source, workers: int = 1) -> Field3D:
    """Rebuild the field held by an archive (or an archive path)"""
    archive = source if isinstance(source, ArchiveFile) else read_archive(source)
    pset = partition_dims(archive.field_dims, archive.block_dims)
    values = decompress_partitions(archive.blocks, pset, workers)
    return Field3D(
        name=archive.role,
        dims=archive.field_dims,
        values=values,
        value_range=ROLE_RANGES[archive.role],
    )
