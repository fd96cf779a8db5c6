"""
The cliff effect of a digital link
==================================

Rate-1/2 LDPC over 4-QAM on AWGN: below about 1 dB nearly every codeword
fails, two decibels higher almost none do. Raw hard decisions degrade
smoothly instead.
"""

from fractions import Fraction

import numpy as np

from digisem.channel import complex_normal
from digisem.phy import qam
from digisem.phy.ldpc import LdpcCode

code = LdpcCode(Fraction(1, 2))
FRAMES = 2000

# %%
# Coded FER and info-bit BER next to the uncoded bit error rate.

print(" SNR dB   uncoded BER   coded BER   FER")
for snr in np.arange(-1.0, 3.01, 0.5):
    gen = np.random.default_rng(int(snr * 10) + 100)
    info = gen.integers(0, 2, (FRAMES, code.k), dtype=np.uint8)
    words = code.encode(info)
    syms = qam.modulate(words.ravel(), 4)
    nv = 10 ** (-snr / 10)
    llr = qam.soft_demod(syms + complex_normal(gen, syms.size, nv), np.ones(syms.size), nv, 4)
    llr = llr.reshape(FRAMES, code.n)
    hard, _, _, _ = code.decode(llr)
    errs = hard[:, :code.k] != info
    print(f"{snr:7.1f}   {np.mean((llr < 0) != words):11.4f}   {np.mean(errs):9.5f}   "
          f"{np.mean(errs.any(axis=1)):.4f}")
