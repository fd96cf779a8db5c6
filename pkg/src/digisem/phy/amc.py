"""Adaptive modulation and coding over the five-entry MCS table."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .ldpc import parse_rate
from .qam import bits_per_symbol


@dataclass(frozen=True)
class McsConfig:
    order: int
    rate: Fraction

    def __post_init__(self):
        bits_per_symbol(self.order)
        object.__setattr__(self, "rate", parse_rate(self.rate))

    @property
    def bits_per_symbol(self) -> int:
        return bits_per_symbol(self.order)

    @property
    def efficiency(self) -> float:
        """Information bits per channel use."""
        return float(self.rate) * self.bits_per_symbol

    def __str__(self):
        return f"{self.order}QAM-{self.rate}"

    @classmethod
    def parse(cls, text: str) -> "McsConfig":
        """Inverse of ``str``: ``"16QAM-3/4"``."""
        try:
            mod, rate = text.strip().split("-")
            return cls(int(mod.upper().removesuffix("QAM")), Fraction(rate))
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"cannot parse MCS {text!r}") from exc


# Switching thresholds (dB, per-symbol SNR): the lowest AWGN SNR on a 0.25 dB
# grid at which FER <= 1e-2, measured with demos/03_amc_thresholds.py.
DEFAULT_TABLE = (
    (McsConfig(4, Fraction(1, 2)), -math.inf),
    (McsConfig(16, Fraction(1, 2)), 7.25),
    (McsConfig(16, Fraction(3, 4)), 11.0),
    (McsConfig(64, Fraction(2, 3)), 14.75),
    (McsConfig(64, Fraction(5, 6)), 17.75),
)


def validate_table(table) -> tuple:
    table = tuple((m if isinstance(m, McsConfig) else McsConfig.parse(m), float(t)) for m, t in table)
    if not table:
        raise ValueError("MCS table is empty")
    thr = [t for _, t in table]
    eff = [m.efficiency for m, _ in table]
    if any(b <= a for a, b in zip(thr, thr[1:])) or any(b <= a for a, b in zip(eff, eff[1:])):
        raise ValueError("MCS thresholds and throughputs must both be strictly increasing")
    return table


def amc_select(snr_db: float, table=DEFAULT_TABLE) -> McsConfig:
    """Highest-throughput entry whose threshold is <= ``snr_db``; the most
    robust entry below the lowest threshold."""
    if math.isnan(snr_db):
        raise ValueError("SNR is NaN")
    chosen = table[0][0]
    for mcs, threshold in table:
        if threshold <= snr_db:
            chosen = mcs
    return chosen
