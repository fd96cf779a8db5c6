"""Mapping a K x q feature bitstream onto fixed-size LDPC information blocks."""

from __future__ import annotations

import numpy as np


def n_blocks(total_bits: int, k: int) -> int:
    return max(1, -(-total_bits // k))


def frame_pack(bits: np.ndarray, k: int) -> np.ndarray:
    """Concatenate feature rows and zero-pad to whole ``k``-bit blocks.

    Returns a ``(n_blocks, k)`` uint8 array.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 2:
        raise ValueError("expected a K x q bit matrix")
    flat = bits.ravel()
    nb = n_blocks(flat.size, k)
    out = np.zeros(nb * k, dtype=np.uint8)
    out[:flat.size] = flat
    return out.reshape(nb, k)


def frame_unpack(blocks: np.ndarray, K: int, q: int, llr: np.ndarray | None = None):
    """Drop padding and split back into per-feature slices.

    ``blocks`` holds decoded information bits ``(n_blocks, k)``; ``llr`` the
    matching posterior LLRs. Returns ``bits`` (K x q) or ``(bits, llrs)``.
    """
    blocks = np.asarray(blocks)
    if blocks.ndim != 2:
        raise ValueError("expected (n_blocks, k) blocks")
    nb, k = blocks.shape
    need = K * q
    if nb != n_blocks(need, k):
        raise ValueError(f"{nb} blocks of {k} bits cannot carry exactly {K}x{q} bits")
    bits = blocks.ravel()[:need].reshape(K, q)
    if llr is None:
        return bits
    llr = np.asarray(llr)
    if llr.shape != blocks.shape:
        raise ValueError("LLR blocks must match bit blocks")
    return bits, llr.ravel()[:need].reshape(K, q)
