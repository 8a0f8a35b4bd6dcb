import numpy as np
import pytest

from adaptive_eb_module.codec.huffman import (
    canonical_codebook,
    canonical_codes,
    huffman_code_lengths,
    huffman_decode,
    huffman_encode,
    kraft_ok,
)


def test_skewed_stream_round_trips(rng):
    tokens = rng.geometric(0.3, size=5000) - 1
    counts, symbols, payload, n_bits = huffman_encode(tokens, alphabet=int(tokens.max()) + 1)
    assert len(payload) == (n_bits + 7) // 8
    assert kraft_ok(counts)
    decoded = huffman_decode(payload, n_bits, counts, symbols)
    np.testing.assert_array_equal(decoded, tokens)


def test_skewed_stream_beats_fixed_width(rng):
    tokens = rng.geometric(0.5, size=10000) - 1
    *_, n_bits = huffman_encode(tokens, alphabet=64)
    assert n_bits < 2.5 * tokens.size


def test_single_symbol_stream_uses_one_bit_per_token():
    tokens = np.full(100, 7)
    counts, symbols, payload, n_bits = huffman_encode(tokens, alphabet=10)
    assert list(counts) == [1]
    assert list(symbols) == [7]
    assert n_bits == 100
    np.testing.assert_array_equal(huffman_decode(payload, n_bits, counts, symbols), tokens)


def test_code_lengths_are_capped():
    fibonacci = np.array([1, 1, 2, 3, 5, 8, 13, 21, 34, 55, 89, 144, 233, 377])
    assert huffman_code_lengths(fibonacci).max() == 13
    capped = huffman_code_lengths(fibonacci, max_length=8)
    assert capped.max() <= 8
    assert np.sum(2.0 ** -capped.astype(float)) <= 1.0


def test_canonical_codes_are_prefix_free():
    lengths = np.array([3, 1, 3, 4, 4, 3])
    counts, sorted_symbols = canonical_codebook(np.arange(6), lengths)
    codes, code_lengths = canonical_codes(counts, sorted_symbols)
    words = [format(int(c), f"0{int(n)}b") for c, n in zip(codes, code_lengths)]
    assert list(sorted_symbols) == [1, 0, 2, 5, 3, 4]
    assert words[0] == "0"
    for i, a in enumerate(words):
        for j, b in enumerate(words):
            if i != j:
                assert not b.startswith(a)


def test_decode_rejects_oversubscribed_codebook():
    with pytest.raises(ValueError):
        huffman_decode(b"\x00", 8, np.array([3]), np.array([0, 1, 2]))


def test_decode_rejects_short_payload():
    counts, symbols, payload, n_bits = huffman_encode(np.array([0, 1, 1, 2, 2, 2]), alphabet=3)
    with pytest.raises(ValueError):
        huffman_decode(payload[:-1] if len(payload) > 1 else b"", n_bits, counts, symbols)


def test_decode_rejects_mismatched_symbol_list():
    with pytest.raises(ValueError):
        huffman_decode(b"\x00", 2, np.array([2]), np.array([0]))


def test_empty_alphabet_is_rejected():
    with pytest.raises(ValueError):
        huffman_code_lengths(np.array([], dtype=np.int64))
