"""
Lorenzo prediction, linear-scaling quantization and zero-run tokens

The kernels are compiled with numba; prediction always runs on previously
reconstructed values so compressor and decompressor walk the same lattice.
Symbol 0 marks an outlier, quantization code q is stored as q + radius.
"""

import math

from numba import njit
import numpy as np

QUANT_RADIUS = 2**15
OUTLIER_SYMBOL = 0
RUN_BITS = 30  # Run tokens cover runs up to 2**31 - 1 cells


def zero_symbol(radius: int = QUANT_RADIUS) -> int:
    return radius


def run_base(radius: int = QUANT_RADIUS) -> int:
    return 2 * radius


def alphabet_size(radius: int = QUANT_RADIUS) -> int:
    return 2 * radius + RUN_BITS + 1


@njit(cache=True, nogil=True)
def _predict(r, i, j, k):
    # r is padded with one leading zero plane per axis
    return (
        r[i, j + 1, k + 1]
        + r[i + 1, j, k + 1]
        + r[i + 1, j + 1, k]
        - r[i, j, k + 1]
        - r[i, j + 1, k]
        - r[i + 1, j, k]
        + r[i, j, k]
    )


@njit(cache=True, nogil=True)
def _quantize_kernel(values, eb, radius):
    nx, ny, nz = values.shape
    r = np.zeros((nx + 1, ny + 1, nz + 1), dtype=np.float64)
    symbols = np.empty(nx * ny * nz, dtype=np.int32)
    two_eb = 2.0 * eb
    limit = radius - 0.5
    idx = 0
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                v = np.float64(values[i, j, k])
                pred = _predict(r, i, j, k)
                t = (v - pred) / two_eb
                sym = 0
                if abs(t) < limit:
                    q = np.int64(math.floor(t + 0.5))
                    rec = np.float64(np.float32(pred + two_eb * q))
                    if abs(rec - v) <= eb:
                        sym = q + radius
                        r[i + 1, j + 1, k + 1] = rec
                if sym == 0:
                    r[i + 1, j + 1, k + 1] = v
                symbols[idx] = sym
                idx += 1
    return symbols, r[1:, 1:, 1:].astype(np.float32)


@njit(cache=True, nogil=True)
def _reconstruct_kernel(symbols, outliers, nx, ny, nz, eb, radius):
    r = np.zeros((nx + 1, ny + 1, nz + 1), dtype=np.float64)
    two_eb = 2.0 * eb
    idx = 0
    o = 0
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                sym = symbols[idx]
                if sym == 0:
                    if o >= outliers.size:
                        raise ValueError("outlier stream exhausted")
                    r[i + 1, j + 1, k + 1] = np.float64(outliers[o])
                    o += 1
                else:
                    q = np.int64(sym) - radius
                    pred = _predict(r, i, j, k)
                    r[i + 1, j + 1, k + 1] = np.float64(np.float32(pred + two_eb * q))
                idx += 1
    if o != outliers.size:
        raise ValueError("unused outliers left in stream")
    return r[1:, 1:, 1:].astype(np.float32)


@njit(cache=True, nogil=True)
def _tokenize_kernel(symbols, zero, base):
    n = symbols.size
    out = np.empty(n, dtype=np.int32)
    m = 0
    i = 0
    while i < n:
        s = symbols[i]
        if s != zero:
            out[m] = s
            m += 1
            i += 1
            continue
        j = i
        while j < n and symbols[j] == zero:
            j += 1
        length = j - i
        bit = RUN_BITS
        while bit >= 0:
            if (length >> bit) & 1:
                if bit == 0:
                    out[m] = zero
                else:
                    out[m] = base + bit
                m += 1
            bit -= 1
        i = j
    return out[:m]


@njit(cache=True, nogil=True)
def _expand_kernel(tokens, zero, base, n_cells):
    out = np.empty(n_cells, dtype=np.int32)
    m = 0
    for t in tokens:
        if t < 0 or t > base + RUN_BITS:
            raise ValueError("token outside the alphabet")
        if t > base:
            length = 1 << (t - base)
            sym = zero
        else:
            length = 1
            sym = t
        if m + length > n_cells:
            raise ValueError("token stream overruns the block")
        out[m : m + length] = sym
        m += length
    if m != n_cells:
        raise ValueError("token stream ends before the block is full")
    return out


def lorenzo_quantize(values: np.ndarray, eb: float, radius: int = QUANT_RADIUS):
    """
    First-order 3-D Lorenzo prediction with error-controlled quantization

    Parameters
    ----------
    values : np.ndarray
        3-D cell array (cast to float32)
    eb : float
        Absolute error bound
    radius : int
        Codes with |q| >= radius become outliers

    Returns
    -------
    (np.ndarray, np.ndarray)
        Flat int32 symbols (0 = outlier, q + radius otherwise) and the float32 reconstruction
    """
    values = np.ascontiguousarray(values, dtype=np.float32)
    if values.ndim != 3:
        raise ValueError(f"expected a 3-D array, got shape {values.shape}")
    return _quantize_kernel(values, float(eb), int(radius))


def lorenzo_reconstruct(symbols, outliers, dims, eb: float, radius: int = QUANT_RADIUS):
    """Inverse of lorenzo_quantize; raises ValueError on an inconsistent stream"""
    nx, ny, nz = (int(d) for d in dims)
    return _reconstruct_kernel(
        np.ascontiguousarray(symbols, dtype=np.int32),
        np.ascontiguousarray(outliers, dtype=np.float32),
        nx,
        ny,
        nz,
        float(eb),
        int(radius),
    )


def tokenize_runs(symbols: np.ndarray, radius: int = QUANT_RADIUS) -> np.ndarray:
    """Fold runs of the zero-residual symbol into power-of-two run tokens"""
    return _tokenize_kernel(
        np.ascontiguousarray(symbols, dtype=np.int32), zero_symbol(radius), run_base(radius)
    )


def expand_runs(tokens: np.ndarray, n_cells: int, radius: int = QUANT_RADIUS) -> np.ndarray:
    """Inverse of tokenize_runs; raises ValueError when the stream does not fill n_cells"""
    return _expand_kernel(
        np.ascontiguousarray(tokens, dtype=np.int32),
        zero_symbol(radius),
        run_base(radius),
        int(n_cells),
    )
