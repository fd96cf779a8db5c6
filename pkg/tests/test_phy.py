import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from digisem.channel import complex_normal
from digisem.phy import ldpc, qam
from digisem.phy.amc import DEFAULT_TABLE, McsConfig, amc_select, validate_table
from digisem.phy.framing import frame_pack, frame_unpack, n_blocks

RATES = [Fraction(1, 2), Fraction(2, 3), Fraction(3, 4), Fraction(5, 6)]


def gf2_syndrome(H, c):
    return (H.astype(np.int64) @ np.asarray(c, dtype=np.int64)) % 2


@pytest.mark.parametrize("rate", RATES)
def test_code_dimensions(rate):
    code = ldpc.LdpcCode(rate)
    assert code.n == 1296
    assert code.k == 1296 * rate
    assert code.H.shape == (1296 - code.k, 1296)


@pytest.mark.parametrize("rate", RATES)
def test_encode_examples(rate):
    code = ldpc.LdpcCode(rate)
    gen = np.random.default_rng(int(rate * 100))
    assert not code.encode(np.zeros(code.k, dtype=np.uint8)).any()
    a, b = gen.integers(0, 2, (2, code.k), dtype=np.uint8)
    ca, cb = code.encode(a), code.encode(b)
    np.testing.assert_array_equal(ca ^ cb, code.encode(a ^ b))
    assert not gf2_syndrome(code.H, ca).any()
    np.testing.assert_array_equal(ca[:code.k], a)
    with pytest.raises(ValueError):
        code.encode(np.zeros(code.k + 1, dtype=np.uint8))


@pytest.mark.parametrize("rate", RATES)
def test_decode_noiseless(rate):
    code = ldpc.LdpcCode(rate)
    info = np.random.default_rng(1).integers(0, 2, code.k, dtype=np.uint8)
    c = code.encode(info)
    hard, post, ok, iters = code.decode(np.where(c == 0, 30.0, -30.0))
    np.testing.assert_array_equal(hard, c)
    assert ok and iters == 1
    assert np.all(np.abs(post) <= 30)


def test_decode_corrects_flipped_bit():
    code = ldpc.LdpcCode(Fraction(1, 2))
    c = code.encode(np.random.default_rng(2).integers(0, 2, code.k, dtype=np.uint8))
    llr = np.where(c == 0, 20.0, -20.0)
    llr[17] = -llr[17]
    hard, _, ok, _ = code.decode(llr)
    assert ok
    np.testing.assert_array_equal(hard, c)


def test_decode_no_information():
    code = ldpc.LdpcCode(Fraction(3, 4))
    hard, post, ok, iters = code.decode(np.zeros(code.n))
    assert np.all(np.isfinite(post))
    assert hard.shape == (code.n,) and iters >= 1


def test_posterior_signs_match_hard_bits():
    code = ldpc.LdpcCode(Fraction(1, 2))
    gen = np.random.default_rng(3)
    info = gen.integers(0, 2, (20, code.k), dtype=np.uint8)
    sym = 1.0 - 2.0 * code.encode(info)
    llr = 2 * (sym + gen.normal(scale=0.9, size=sym.shape)) / 0.81
    hard, post, ok, _ = code.decode(llr)
    assert np.array_equal(hard == 1, post < 0)
    assert np.all(np.abs(post) <= 30)


def test_dump_prototypes_lists_four_tables():
    text = ldpc.dump_prototypes()
    assert text.count("# rate") == 4
    rows = [line.split() for line in text.splitlines() if line and not line.startswith("#")]
    assert all(len(r) == 24 for r in rows)
    assert len(rows) == 12 + 8 + 6 + 4
    assert all(-1 <= int(v) < 54 for r in rows for v in r)


def test_expand_matches_circulant_definition():
    P = ldpc.expand(np.array([[2, -1]]), 4)
    want = np.zeros((4, 8), dtype=np.uint8)
    for r in range(4):
        want[r, (r + 2) % 4] = 1
    np.testing.assert_array_equal(P, want)


# -- QAM ----------------------------------------------------------------------

def test_qam_examples():
    assert qam.modulate(np.array([0, 0]), 4)[0] == pytest.approx((1 + 1j) / math.sqrt(2))
    for order, levels in ((4, [1]), (16, [1, 3]), (64, [1, 3, 5, 7])):
        pts = qam.constellation(order)
        assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0)
        scale = math.sqrt(2 * np.mean(np.square(levels)))
        assert sorted(set(np.round(np.abs(pts.real) * scale, 9))) == levels
    with pytest.raises(ValueError):
        qam.modulate(np.zeros(5), 16)
    with pytest.raises(ValueError):
        qam.modulate(np.zeros(4), 8)


@pytest.mark.parametrize("order", [4, 16, 64])
def test_qam_gray_neighbours(order):
    pts = qam.constellation(order)
    side = int(math.isqrt(order))
    step = 2 / math.sqrt(2 * (side * side - 1) / 3)
    for a in range(order):
        for b in range(a + 1, order):
            d = pts[a] - pts[b]
            axis_step = (abs(abs(d.real) - step) < 1e-9 and abs(d.imag) < 1e-9) or \
                        (abs(abs(d.imag) - step) < 1e-9 and abs(d.real) < 1e-9)
            if axis_step:
                assert bin(a ^ b).count("1") == 1


def brute_llr(y, h, nv, order):
    pts = qam.constellation(order)
    bps = int(math.log2(order))
    out = []
    for yy, hh in zip(y, h):
        d = np.abs(yy - hh * pts) ** 2
        for b in range(bps):
            bit = (np.arange(order) >> (bps - 1 - b)) & 1
            out.append((d[bit == 1].min() - d[bit == 0].min()) / nv)
    return np.clip(out, -30, 30)


@pytest.mark.parametrize("order", [4, 16, 64])
def test_soft_demod_matches_brute_force(order):
    gen = np.random.default_rng(order)
    y = complex_normal(gen, 200, 1.0)
    h = complex_normal(gen, 200, 1.0)
    np.testing.assert_allclose(qam.soft_demod(y, h, 0.7, order), brute_llr(y, h, 0.7, order), atol=1e-9)


def test_soft_demod_examples():
    y = np.array([(1 + 1j) / math.sqrt(2)])
    llr = qam.soft_demod(y, np.ones(1), 1.0, 4)
    # nearest 1-bit point is at distance sqrt(2) on one axis: (2 - 0) / 1
    np.testing.assert_allclose(llr, brute_llr(y, np.ones(1), 1.0, 4))
    np.testing.assert_allclose(llr, [2.0, 2.0])
    # on the I decision boundary the first bit carries no information
    assert qam.soft_demod(np.array([0.3j]), np.ones(1), 0.5, 4)[0] == 0.0
    with pytest.raises(ValueError):
        qam.soft_demod(y, np.ones(1), 0.0, 4)


@pytest.mark.parametrize("order", [4, 16, 64])
def test_noiseless_demod_recovers_bits(order):
    bps = int(math.log2(order))
    bits = np.random.default_rng(0).integers(0, 2, bps * 300)
    llr = qam.soft_demod(qam.modulate(bits, order), np.ones(300), 1e-3, order)
    np.testing.assert_array_equal((llr < 0).astype(int), bits)


# -- AMC --------------------------------------------------------------------------

def test_amc_examples():
    assert amc_select(-10.0) == McsConfig(4, Fraction(1, 2))
    assert amc_select(20.0) == McsConfig(64, Fraction(5, 6))
    picks = [amc_select(s).efficiency for s in np.arange(-10, 25, 0.25)]
    assert picks == sorted(picks)


def test_amc_table_validation():
    with pytest.raises(ValueError):
        validate_table([(McsConfig(4, Fraction(1, 2)), 0.0), (McsConfig(16, Fraction(1, 2)), 0.0)])
    assert str(McsConfig.parse("16QAM-3/4")) == "16QAM-3/4"
    assert McsConfig.parse("64QAM-5/6").bits_per_symbol == 6
    thresholds = [t for _, t in DEFAULT_TABLE]
    assert thresholds[0] == -math.inf and thresholds == sorted(thresholds)


# -- framing ----------------------------------------------------------------------

def test_frame_examples():
    assert n_blocks(2400, 648) == 4
    bits = np.random.default_rng(0).integers(0, 2, (100, 24), dtype=np.uint8)
    blocks = frame_pack(bits, 648)
    assert blocks.shape == (4, 648)
    assert not blocks.ravel()[2400:].any() and blocks.size - 2400 == 192
    exact = frame_pack(np.ones((27, 24), dtype=np.uint8), 648)
    assert exact.shape == (1, 648) and exact.all()
    with pytest.raises(ValueError):
        frame_unpack(blocks, 200, 24)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 80), st.sampled_from([6, 12, 24]), st.sampled_from([648, 864, 972, 1080]),
       st.integers(0, 2**32 - 1))
def test_frame_round_trip(K, q, k, seed):
    gen = np.random.default_rng(seed)
    bits = gen.integers(0, 2, (K, q), dtype=np.uint8)
    blocks = frame_pack(bits, k)
    llr = gen.normal(size=blocks.shape)
    back, llr_back = frame_unpack(blocks, K, q, llr)
    np.testing.assert_array_equal(back, bits)
    np.testing.assert_array_equal(llr_back, llr.ravel()[:K * q].reshape(K, q))


@pytest.mark.parametrize("mcs", [m for m, _ in DEFAULT_TABLE], ids=str)
def test_noiseless_chain_all_mcs(mcs):
    code = ldpc.LdpcCode(mcs.rate)
    info = np.random.default_rng(7).integers(0, 2, (1000, code.k), dtype=np.uint8)
    syms = qam.modulate(code.encode(info).ravel(), mcs.order)
    llr = qam.soft_demod(syms, np.ones(syms.size), 1e-12, mcs.order).reshape(1000, code.n)
    hard, _, ok, _ = code.decode(llr)
    np.testing.assert_array_equal(hard[:, :code.k], info)
    assert ok.all()


def _awgn_rate_half(snr_db, frames, seed):
    code = ldpc.LdpcCode(Fraction(1, 2))
    gen = np.random.default_rng(seed)
    info = gen.integers(0, 2, (frames, code.k), dtype=np.uint8)
    words = code.encode(info)
    syms = qam.modulate(words.ravel(), 4)
    nv = 10 ** (-snr_db / 10)
    y = syms + complex_normal(gen, syms.size, nv)
    llr = qam.soft_demod(y, np.ones(y.size), nv, 4).reshape(frames, code.n)
    hard, _, _, _ = code.decode(llr)
    uncoded = np.mean((llr < 0) != words)
    coded = np.mean(hard[:, :code.k] != info)
    fer = np.mean(np.any(hard[:, :code.k] != info, axis=1))
    return coded, uncoded, fer


@pytest.mark.parametrize("snr", [
    pytest.param(0.0, marks=pytest.mark.xfail(
        strict=True, reason="normalized min-sum (scale 0.8) that fails to converge leaves "
                            "slightly more info-bit errors (~0.161) than raw decisions (~0.158)")),
    0.25, 0.5, 1.0, 2.0, 3.0])
def test_coded_ber_not_above_uncoded(snr):
    coded, uncoded, _ = _awgn_rate_half(snr, 1000, int(snr * 100))
    assert coded <= uncoded


def test_fer_monotone():
    fers = [_awgn_rate_half(snr, 1000, int(snr * 100))[2] for snr in (0.0, 0.5, 1.0, 1.5, 2.0, 3.0)]
    # one-sided tolerance of three binomial standard errors
    for a, b in zip(fers, fers[1:]):
        assert b <= a + 3 * math.sqrt(max(a * (1 - a), 1e-3) / 1000)
