"""Gray-mapped square QAM and max-log soft demapping.

Bit layout per symbol: the first half of the ``log2(order)`` bits selects the
in-phase level, the second half the quadrature level, most significant bit
first. On each axis the Gray pattern ``g`` maps to the level
``(sqrt(order) - 1) - 2 * gray_inverse(g)``, so an all-zero pattern sits at
the most positive level and neighbouring levels differ in one bit. Points are
scaled to unit average energy.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

ORDERS = (4, 16, 64)
LLR_CLAMP = 30.0


def gray(x):
    return x ^ (x >> 1)


def gray_inverse(g):
    g = np.asarray(g).copy()
    shift = g >> 1
    while np.any(shift):
        g ^= shift
        shift >>= 1
    return g


def bits_per_symbol(order: int) -> int:
    if order not in ORDERS:
        raise ValueError(f"unsupported modulation order {order}; choose from {ORDERS}")
    return int(order).bit_length() - 1


@lru_cache(maxsize=None)
def constellation(order: int) -> np.ndarray:
    """Complex points indexed by the integer value of their bit label (MSB first)."""
    bps = bits_per_symbol(order)
    half = bps // 2
    side = 1 << half
    labels = np.arange(order)
    i_bits = labels >> half
    q_bits = labels & (side - 1)
    level = lambda g: (side - 1) - 2 * gray_inverse(g)
    pts = level(i_bits) + 1j * level(q_bits)
    pts = pts / np.sqrt(np.mean(np.abs(pts) ** 2))
    pts.setflags(write=False)
    return pts


@lru_cache(maxsize=None)
def _label_bits(order: int) -> np.ndarray:
    bps = bits_per_symbol(order)
    labels = np.arange(order)
    return ((labels[:, None] >> np.arange(bps - 1, -1, -1)) & 1).astype(bool)


def modulate(bits: np.ndarray, order: int) -> np.ndarray:
    """Map a flat bit sequence to symbols. Padding is the caller's job."""
    bps = bits_per_symbol(order)
    bits = np.asarray(bits).ravel()
    if bits.size % bps:
        raise ValueError(f"{bits.size} bits do not divide into {bps}-bit symbols")
    groups = bits.reshape(-1, bps).astype(np.int64)
    labels = groups @ (1 << np.arange(bps - 1, -1, -1))
    return constellation(order)[labels]


def soft_demod(y: np.ndarray, h: np.ndarray | complex, noise_var: float, order: int) -> np.ndarray:
    """Max-log LLRs, positive when the bit is more likely 0, clamped to +/-30.

    Assumes coherent detection: ``h`` is the true per-symbol channel gain.
    """
    if not noise_var > 0:
        raise ValueError(f"noise variance must be positive, got {noise_var}")
    pts = constellation(order)
    y = np.asarray(y, dtype=complex).ravel()
    h = np.broadcast_to(np.asarray(h, dtype=complex).ravel() if np.ndim(h) else h, y.shape)
    dist = np.abs(y[:, None] - h[:, None] * pts[None, :]) ** 2          # (D, order)
    lb = _label_bits(order)                                               # (order, bps)
    inf = np.inf
    d1 = np.where(lb[None], dist[:, :, None], inf).min(axis=1)
    d0 = np.where(~lb[None], dist[:, :, None], inf).min(axis=1)
    llr = (d1 - d0) / noise_var
    return np.clip(llr, -LLR_CLAMP, LLR_CLAMP).ravel()


def hard_demod(llr: np.ndarray) -> np.ndarray:
    return (np.asarray(llr) < 0).astype(np.uint8)
