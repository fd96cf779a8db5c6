"""AWGN and Rayleigh block/symbol fading channels.

SNR is the ratio of the mean transmitted symbol power to the noise variance.
Symbols are unit power, so by default ``noise_var = 10 ** (-snr_db / 10)``.
The ``"total"`` convention instead treats the signal power as the energy of
the whole block (``D`` symbols), i.e. ``noise_var = D * 10 ** (-snr_db / 10)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as _rng

KINDS = ("awgn", "rayleigh")
FADING = ("block", "symbol")
CONVENTIONS = ("symbol", "total")


@dataclass(frozen=True)
class ChannelConfig:
    kind: str = "awgn"
    snr_db: float = 10.0
    fading: str = "block"
    seed: int = 0
    snr_convention: str = "symbol"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"channel kind must be one of {KINDS}, got {self.kind!r}")
        if self.fading not in FADING:
            raise ValueError(f"fading must be one of {FADING}, got {self.fading!r}")
        if self.snr_convention not in CONVENTIONS:
            raise ValueError(f"snr convention must be one of {CONVENTIONS}")
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")


def noise_variance(snr_db: float, n_symbols: int = 1, convention: str = "symbol") -> float:
    ratio = 10.0 ** (-snr_db / 10.0)
    return ratio * n_symbols if convention == "total" else ratio


def complex_normal(gen: np.random.Generator, size, var: float = 1.0) -> np.ndarray:
    """CN(0, var): real and imaginary parts each with variance var/2."""
    s = np.sqrt(var / 2.0)
    return gen.normal(0.0, s, size) + 1j * gen.normal(0.0, s, size)


def apply(symbols: np.ndarray, cfg: ChannelConfig, block_symbols: int | None = None,
          noise_var: float | None = None, gen: np.random.Generator | None = None):
    """Pass ``symbols`` through the channel.

    Args:
        symbols: complex transmitted block.
        cfg: channel settings; ``cfg.seed`` seeds the draw unless ``gen`` is given.
        block_symbols: symbols per LDPC codeword, the coherence span for
            per-block fading. Defaults to the whole block.
        noise_var: overrides the SNR-derived variance (0 gives a noiseless
            channel, useful in tests).

    Returns:
        ``(received, h, noise_var)`` where ``h`` has one gain per symbol.
    """
    x = np.asarray(symbols, dtype=complex).ravel()
    if x.size == 0:
        raise ValueError("cannot transmit an empty symbol block")
    if gen is None:
        gen = _rng.substream(cfg.seed, _rng.CHANNEL)
    if noise_var is None:
        noise_var = noise_variance(cfg.snr_db, x.size, cfg.snr_convention)
    if noise_var < 0:
        raise ValueError("noise variance must be non-negative")

    if cfg.kind == "awgn":
        h = np.ones(x.size, dtype=complex)
    elif cfg.fading == "symbol":
        h = complex_normal(gen, x.size)
    else:
        span = x.size if block_symbols is None else int(block_symbols)
        if span <= 0:
            raise ValueError("block_symbols must be positive")
        n_coh = -(-x.size // span)
        h = np.repeat(complex_normal(gen, n_coh), span)[:x.size]

    noise = complex_normal(gen, x.size, noise_var) if noise_var > 0 else 0.0
    return h * x + noise, h, float(noise_var)
