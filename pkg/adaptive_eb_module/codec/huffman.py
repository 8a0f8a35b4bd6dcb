"""
Canonical Huffman coding of quantization tokens

The codebook is serialised as the number of codes per length plus the symbol
list in canonical order; code words are rebuilt from those two arrays alone.
"""

from heapq import heapify, heappop, heappush
from typing import Tuple

from numba import njit
import numpy as np

MAX_CODE_LENGTH = 32


def _tree_lengths(counts: np.ndarray) -> np.ndarray:
    """Code length of every symbol in an (unrestricted) Huffman tree"""
    n = len(counts)
    if n == 1:
        return np.ones(1, dtype=np.int64)
    # (count, node id): ties resolve by id so the tree is deterministic
    heap = [(int(c), i) for i, c in enumerate(counts)]
    heapify(heap)
    parent = np.zeros(2 * n - 1, dtype=np.int64)
    next_id = n
    while len(heap) > 1:
        c1, a = heappop(heap)
        c2, b = heappop(heap)
        parent[a] = next_id
        parent[b] = next_id
        heappush(heap, (c1 + c2, next_id))
        next_id += 1
    depth = np.zeros(2 * n - 1, dtype=np.int64)
    root = next_id - 1
    for node in range(root - 1, -1, -1):
        depth[node] = depth[parent[node]] + 1
    return depth[:n]


def huffman_code_lengths(counts: np.ndarray, max_length: int = MAX_CODE_LENGTH) -> np.ndarray:
    """
    Huffman code lengths capped at ``max_length``

    When the tree is too deep the counts are halved (kept >= 1) and the tree rebuilt.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size == 0:
        raise ValueError("cannot build a Huffman code for an empty alphabet")
    while True:
        lengths = _tree_lengths(counts)
        if lengths.max() <= max_length:
            return lengths
        counts = (counts + 1) // 2


def canonical_codebook(symbols: np.ndarray, lengths: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Canonical ordering of a code

    Returns
    -------
    (np.ndarray, np.ndarray)
        ``counts[l - 1]`` = number of codes of length l, and the symbols sorted by
        (length, symbol)
    """
    order = np.lexsort((symbols, lengths))
    max_len = int(lengths.max())
    counts = np.bincount(lengths, minlength=max_len + 1)[1:]
    return counts.astype(np.int64), np.asarray(symbols)[order].astype(np.int64)


def canonical_codes(counts: np.ndarray, sorted_symbols: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Code word and length of each symbol, in the order of ``sorted_symbols``"""
    lengths = np.repeat(np.arange(1, len(counts) + 1), counts)
    codes = np.zeros(len(sorted_symbols), dtype=np.uint64)
    code = 0
    prev = int(lengths[0]) if len(lengths) else 0
    for i, length in enumerate(lengths):
        code <<= int(length) - prev
        codes[i] = code
        code += 1
        prev = int(length)
    return codes, lengths.astype(np.int64)


def kraft_ok(counts: np.ndarray) -> bool:
    """True when the length counts describe a prefix code"""
    total = 0.0
    for length, n in enumerate(counts, start=1):
        total += int(n) * 2.0 ** (-length)
    return total <= 1.0 + 1e-12


def huffman_encode(tokens: np.ndarray, alphabet: int):
    """
    Encode a token stream

    Parameters
    ----------
    tokens : np.ndarray
        Non-empty integer tokens in [0, alphabet)
    alphabet : int
        Alphabet size

    Returns
    -------
    tuple
        (length counts, canonical symbols, payload bytes, payload bit count)
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    frequencies = np.bincount(tokens, minlength=alphabet)
    present = np.flatnonzero(frequencies)
    lengths = huffman_code_lengths(frequencies[present])
    counts, sorted_symbols = canonical_codebook(present, lengths)
    codes, code_lengths = canonical_codes(counts, sorted_symbols)

    code_of = np.zeros(alphabet, dtype=np.uint64)
    length_of = np.zeros(alphabet, dtype=np.int64)
    code_of[sorted_symbols] = codes
    length_of[sorted_symbols] = code_lengths

    tl = length_of[tokens]
    n_bits = int(tl.sum())
    # Spread every code word over its bit positions, most significant bit first
    starts = np.cumsum(tl) - tl
    owner = np.repeat(np.arange(tokens.size), tl)
    offset = np.arange(n_bits, dtype=np.int64) - starts[owner]
    shift = (tl[owner] - 1 - offset).astype(np.uint64)
    bits = ((code_of[tokens][owner] >> shift) & np.uint64(1)).astype(np.uint8)
    payload = np.packbits(bits).tobytes()
    return counts, sorted_symbols, payload, n_bits


@njit(cache=True, nogil=True)
def _decode_kernel(payload, n_bits, counts, symbols):
    out = np.empty(max(n_bits, 1), dtype=np.int32)
    n_lengths = counts.size
    pos = 0
    m = 0
    while pos < n_bits:
        code = 0
        first = 0
        index = 0
        found = False
        for length in range(n_lengths):
            if pos >= n_bits:
                raise ValueError("truncated Huffman code")
            bit = (payload[pos >> 3] >> (7 - (pos & 7))) & 1
            pos += 1
            code = code | bit
            count = counts[length]
            if code - first < count:
                out[m] = symbols[index + code - first]
                m += 1
                found = True
                break
            index += count
            first += count
            first <<= 1
            code <<= 1
        if not found:
            raise ValueError("invalid Huffman code")
    return out[:m]


def huffman_decode(payload: bytes, n_bits: int, counts: np.ndarray, symbols: np.ndarray) -> np.ndarray:
    """Decode exactly ``n_bits`` bits; raises ValueError on a malformed stream"""
    if len(payload) * 8 < n_bits:
        raise ValueError("payload shorter than the declared bit length")
    if int(np.sum(counts)) != len(symbols):
        raise ValueError("codebook counts do not match the symbol list")
    if not kraft_ok(counts):
        raise ValueError("codebook lengths violate the Kraft inequality")
    return _decode_kernel(
        np.frombuffer(payload, dtype=np.uint8),
        int(n_bits),
        np.ascontiguousarray(counts, dtype=np.int64),
        np.ascontiguousarray(symbols, dtype=np.int64),
    )
