from adaptive_eb_module.codec.block import (
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
from adaptive_eb_module.codec.lorenzo import QUANT_RADIUS

__all__ = [
    "QUANT_RADIUS",
    "block_from_bytes",
    "block_to_bytes",
    "compress_block",
    "compress_partitions",
    "compression_ratio",
    "decompress_block",
    "decompress_partitions",
    "encoded_size",
    "error_histogram",
    "measure_bitrate",
    "total_bitrate",
]
