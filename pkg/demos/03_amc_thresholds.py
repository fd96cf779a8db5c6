"""
Measuring the AMC switching thresholds
======================================

Each MCS in the table is used from the lowest SNR at which its AWGN frame
error rate drops to 1e-2 or below. This script finds that SNR on a 0.25 dB
grid: a 1 dB scan brackets the crossing, then the last decibel is refined.
"""

import numpy as np

from digisem.channel import complex_normal, noise_variance
from digisem.phy import qam
from digisem.phy.amc import DEFAULT_TABLE
from digisem.phy.ldpc import LdpcCode
from digisem.rng import CHANNEL, substream

FRAMES = 500
TARGET = 1e-2


def fer(mcs, snr_db, frames=FRAMES, seed=0):
    code = LdpcCode(mcs.rate)
    gen = substream(seed, CHANNEL, mcs.order, int(snr_db * 100) + 10_000)
    info = gen.integers(0, 2, (frames, code.k), dtype=np.uint8)
    words = code.encode(info)
    syms = qam.modulate(words.ravel(), mcs.order)
    nv = noise_variance(snr_db, syms.size, "symbol")
    rx = syms + complex_normal(gen, syms.size, nv)
    llr = qam.soft_demod(rx, np.ones_like(rx), nv, mcs.order).reshape(frames, code.n)
    hard, _, _, _ = code.decode(llr)
    return float(np.mean(np.any(hard[:, :code.k] != info, axis=1)))


# %%
# Coarse 1 dB scan from a few dB below the Shannon limit, then 0.25 dB steps.

measured = []
for mcs, _ in DEFAULT_TABLE:
    shannon = 10 * np.log10(2 ** mcs.efficiency - 1)
    snr = np.floor(shannon)
    while fer(mcs, snr) > TARGET:
        snr += 1.0
    lo = snr - 1.0
    for fine in np.arange(lo + 0.25, snr + 0.01, 0.25):
        if fer(mcs, fine) <= TARGET:
            break
    measured.append((mcs, float(fine)))
    print(f"{str(mcs):>10}  Shannon {shannon:6.2f} dB   FER<=1e-2 from {fine:6.2f} dB")

# %%
# The first entry is the fallback and keeps a threshold of -inf.

table = ",".join(f"{m}:{'-inf' if i == 0 else t}" for i, (m, t) in enumerate(measured))
print("phy.mcs_table =", table)
