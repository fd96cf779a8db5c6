import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from digisem import converter as V
from digisem.errors import ZeroVectorError


def random_codebook(M, N, L, seed=0):
    gen = np.random.default_rng(seed)
    return V.CodebookSet(gen.normal(size=(M, N, L)))


def brute_force_indices(z, cb):
    out = []
    for m in range(cb.M):
        s = z[m * cb.L:(m + 1) * cb.L]
        best, best_n = -np.inf, None
        for n in range(cb.N):
            e = cb.codewords[m, n]
            c = float(s @ e) / (math.sqrt(float(s @ s)) * math.sqrt(float(e @ e)))
            if c > best:
                best, best_n = c, n
        out.append(best_n)
    return out


def test_decouple_examples():
    z = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(V.decouple(z, V.identity_decoupling(4)), z)
    swap = np.zeros((4, 4))
    swap[[0, 1, 2, 3], [2, 3, 0, 1]] = 1
    np.testing.assert_array_equal(V.decouple(z, swap), [3.0, 4.0, 1.0, 2.0])
    np.testing.assert_array_equal(V.decouple(z, 2 * np.eye(4)), 2 * z)
    with pytest.raises(ValueError):
        V.decouple(z, np.eye(3))


def test_cosine_examples():
    assert V.cosine_sim(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == pytest.approx(1.0)
    assert V.cosine_sim(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == 0.0
    assert V.cosine_sim(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(0.70711, abs=1e-5)
    with pytest.raises(ZeroVectorError):
        V.cosine_sim(np.zeros(2), np.ones(2))


def test_quantize_examples():
    cb = random_codebook(2, 8, 3)
    z = np.concatenate([cb.codewords[0, 3], 5 * cb.codewords[1, 3]])
    assert V.quantize(z, cb).tolist() == [3, 3]
    np.testing.assert_array_equal(V.dequantize(V.quantize(z[:3].tolist() + cb.codewords[1, 3].tolist(), cb), cb),
                                  np.concatenate([cb.codewords[0, 3], cb.codewords[1, 3]]))


def test_quantize_small_hand_codebook():
    code = np.array([[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.6, 0.8]]])
    cb = V.CodebookSet(code)
    for z in ([0.9, 0.1], [0.5, 0.9], [-1.0, -0.2], [0.1, -1.0], [0.3, 0.4]):
        assert V.quantize(np.array(z), cb).tolist() == brute_force_indices(np.array(z), cb)


def test_quantize_tie_goes_to_smallest_index():
    code = np.array([[[1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [1.0, 0.0]]])
    assert V.quantize(np.array([3.0, 0.0]), V.CodebookSet(code)).tolist() == [0]


def test_quantize_zero_subvector_raises():
    cb = random_codebook(2, 4, 2)
    with pytest.raises(ZeroVectorError):
        V.quantize(np.array([1.0, 1.0, 0.0, 0.0]), cb)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_quantize_scale_invariant(seed, c):
    cb = random_codebook(3, 16, 4, seed % 7)
    z = np.random.default_rng(seed).normal(size=12)
    assert V.quantize(c * z, cb).tolist() == V.quantize(z, cb).tolist()


def test_dequantize_examples():
    cb = random_codebook(3, 8, 2, seed=4)
    np.testing.assert_array_equal(V.dequantize(np.zeros(3, dtype=int), cb), cb.codewords[:, 0].ravel())
    idx = np.random.default_rng(1).integers(0, 8, size=(5, 3))
    manual = np.array([np.concatenate([cb.codewords[m, i[m]] for m in range(3)]) for i in idx])
    np.testing.assert_array_equal(V.dequantize(idx, cb), manual)
    with pytest.raises(ValueError):
        V.dequantize(np.array([0, 8, 0]), cb)


def test_gray_code_values():
    assert V.gray_code(np.arange(8)).tolist() == [0, 1, 3, 2, 6, 7, 5, 4]


@pytest.mark.parametrize("N", [4, 16, 64])
def test_gray_assign_is_bijection(N):
    cb = V.gray_assign(random_codebook(2, N, 4, seed=N))
    for m in range(2):
        assert sorted(cb.gray[m].tolist()) == list(range(N))


def test_gray_assign_rejects_non_square():
    with pytest.raises(ValueError):
        V.gray_assign(random_codebook(1, 8, 4))


def test_gray_grid_neighbours_differ_in_one_bit():
    # 8x8 codebook whose (u, v) projections already form a grid
    side = 8
    code = np.array([[c, c, r, r] for r in range(side) for c in range(side)], dtype=float)
    code += np.random.default_rng(0).normal(scale=1e-3, size=code.shape)
    cb = V.gray_assign(V.CodebookSet(code[None]))
    row, col = V.grid_positions(cb.codewords[0])
    pos = {(r, c): i for i, (r, c) in enumerate(zip(row, col))}
    pairs = 0
    for (r, c), i in pos.items():
        for dr, dc in ((0, 1), (1, 0)):
            j = pos.get((r + dr, c + dc))
            if j is not None:
                assert bin(int(cb.gray[0, i] ^ cb.gray[0, j])).count("1") == 1
                pairs += 1
    assert pairs == 2 * side * (side - 1)
    # the hand-built grid is recovered exactly
    assert all(row[r * side + c] == r and col[r * side + c] == c for r in range(side) for c in range(side))


def test_bits_examples():
    cb = V.gray_assign(random_codebook(4, 64, 2))
    assert cb.q == 24
    idx = np.random.default_rng(3).integers(0, 64, size=(50, 4))
    bits = V.indices_to_bits(idx, cb)
    assert bits.shape == (50, 24) and set(np.unique(bits)) <= {0, 1}
    np.testing.assert_array_equal(V.bits_to_indices(bits, cb), idx)
    single = V.gray_assign(random_codebook(1, 64, 2))
    zero_idx = int(np.flatnonzero(single.gray[0] == 0)[0])
    assert V.indices_to_bits(np.array([[zero_idx]]), single).tolist() == [[0] * 6]
    with pytest.raises(ValueError):
        V.bits_to_indices(np.zeros((2, 23), dtype=np.uint8), cb)


def test_bits_exhaustive_small():
    cb = V.gray_assign(random_codebook(2, 16, 2, seed=2))
    idx = np.array(list(itertools.product(range(16), repeat=2)))
    np.testing.assert_array_equal(V.bits_to_indices(V.indices_to_bits(idx, cb), cb), idx)
    assert len({tuple(b) for b in V.indices_to_bits(idx, cb)}) == 256


def test_update_utilization_examples():
    cb = random_codebook(1, 4, 2)
    cb.rho = 0.0
    out = V.update_utilization(cb, np.array([[6, 0, 0, 0]]), 2, 3)
    assert out.utilization[0, 0] == 1.0
    cb = random_codebook(1, 4, 2)
    cb.rho = 0.9
    cb.utilization[:] = 0.1
    out = V.update_utilization(cb, np.zeros((1, 4)), 2, 3)
    np.testing.assert_allclose(out.utilization, 0.09)
    out = V.update_utilization(cb, np.array([[3, 0, 0, 0]]), 2, 3)
    assert out.utilization[0, 0] == pytest.approx(0.14, abs=1e-15)
    cb.rho = 1.0
    with pytest.raises(ValueError):
        V.update_utilization(cb, np.zeros((1, 4)), 1, 1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.999))
def test_utilization_stays_in_unit_interval(seed, rho):
    gen = np.random.default_rng(seed)
    cb = random_codebook(2, 8, 2)
    cb.rho = rho
    for _ in range(20):
        B, K = int(gen.integers(1, 4)), int(gen.integers(1, 6))
        idx = gen.integers(0, 8, size=(B * K, 2))
        counts = np.stack([np.bincount(idx[:, m], minlength=8) for m in range(2)])
        assert np.all(counts.sum(axis=1) <= B * K)
        cb = V.update_utilization(cb, counts, B, K)
        assert np.all((cb.utilization >= 0) & (cb.utilization <= 1))


def test_anchor_probs_examples():
    e = np.array([1.0, 0.0])
    assert V.anchor_probs(e, np.array([[0.3, 0.4]])).tolist() == [1.0]
    np.testing.assert_allclose(V.anchor_probs(e, np.array([[1.0, 1.0], [1.0, -1.0]])), [0.5, 0.5])
    p = V.anchor_probs(e, np.array([[2.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_allclose(p, [0.2689, 0.7311], atol=1e-4)
    assert p.sum() == pytest.approx(1.0)
    with pytest.raises(ZeroVectorError):
        V.anchor_probs(e, np.zeros((1, 2)))


def test_reinit_weight_examples():
    assert V.reinit_weight(0.0, 64, 0.99, 1e-5) == pytest.approx(math.exp(-1e-5))
    w = V.reinit_weight(0.01, 64, 0.9, 1e-5)
    assert w == pytest.approx(math.exp(-64.00001), rel=1e-9)
    assert 1.5e-28 < w < 1.7e-28
    assert V.reinit_weight(0.5, 64, 0.99, 1e-5) < 1e-300
    with pytest.raises(ValueError):
        V.reinit_weight(0.1, 64, 1.0, 1e-5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 0.05), st.floats(1e-6, 0.05))
def test_reinit_weight_decreasing_and_bounded(R, dR):
    a = V.reinit_weight(R, 16, 0.9, 1e-5)
    b = V.reinit_weight(R + dR, 16, 0.9, 1e-5)
    assert 0 < a <= 1
    assert b < a or b == 0.0


def test_reinit_codeword_examples():
    e, z = np.array([0.0, 2.0]), np.array([2.0, 0.0])
    np.testing.assert_array_equal(V.reinit_codeword(e, z, 0.0), e)
    np.testing.assert_array_equal(V.reinit_codeword(e, z, 1.0), z)
    np.testing.assert_array_equal(V.reinit_codeword(e, z, 0.5), [1.0, 1.0])
    with pytest.raises(ValueError):
        V.reinit_codeword(e, np.ones(3), 0.5)


def test_training_fixed_point():
    cfg = V.ConverterConfig(M=2, N=4, L=3, reinit=False)
    cb = random_codebook(2, 4, 3, seed=1)
    idx = np.array([[i % 4, (i + 1) % 4] for i in range(8)])
    Z = V.dequantize(idx, cb)
    W, out, loss = V.train_step(Z, np.eye(6), cb, cfg, np.random.default_rng(0))
    assert loss == 0.0
    np.testing.assert_array_equal(out.codewords, cb.codewords)
    np.testing.assert_array_equal(W, np.eye(6))


def test_training_empty_stream():
    with pytest.raises(ValueError):
        V.train_converter(iter(()), V.ConverterConfig())


def spherical_kmeans(X, k, iters=100, seed=0):
    gen = np.random.default_rng(seed)
    U = X / np.linalg.norm(X, axis=1, keepdims=True)
    C = U[gen.choice(len(U), k, replace=False)]
    for _ in range(iters):
        a = np.argmax(U @ C.T, axis=1)
        C = np.array([U[a == j].sum(axis=0) for j in range(k)])
        C /= np.linalg.norm(C, axis=1, keepdims=True)
    return C


def two_cluster_batches(steps, n, seed):
    gen = np.random.default_rng(seed)
    dirs = np.array([[np.cos(0.3), np.sin(0.3)], [np.cos(2.0), np.sin(2.0)]])
    for _ in range(steps):
        lab = gen.integers(0, 2, n)
        yield dirs[lab] * gen.uniform(0.5, 2.0, (n, 1)) + gen.normal(scale=0.05, size=(n, 2))


def test_two_cluster_convergence_matches_spherical_kmeans():
    cfg = V.ConverterConfig(M=1, N=2, L=2, anchors=64, w_lr=0.0, seed=4)
    res = V.train_converter(two_cluster_batches(300, 128, 1), cfg)
    oracle = spherical_kmeans(np.concatenate(list(two_cluster_batches(20, 256, 2))), 2)
    learned = res.codebook.codewords[0] / np.linalg.norm(res.codebook.codewords[0], axis=1, keepdims=True)
    for e in learned:
        angle = np.arccos(np.clip((oracle @ e).max(), -1, 1))
        assert angle < 0.05
    # both clusters are covered
    assert len({int(np.argmax(oracle @ e)) for e in learned}) == 2


def test_loss_trace_settles():
    gen = np.random.default_rng(0)
    centers = gen.normal(size=(32, 16))

    def batches():
        for _ in range(200):
            lab = gen.integers(0, 32, 256)
            yield centers[lab] + 0.1 * gen.normal(size=(256, 16))

    res = V.train_converter(batches(), V.ConverterConfig(M=2, N=16, L=8, seed=1))
    tail = np.array(res.losses[len(res.losses) // 2:])
    smooth = np.convolve(tail, np.ones(10) / 10, mode="valid")
    # smoothed loss never rises more than 5% above its running minimum
    assert np.all(smooth <= np.minimum.accumulate(smooth) * 1.05)
    assert np.mean(res.losses[-20:]) < np.mean(res.losses[:20])


def test_perplexity():
    assert V.perplexity(np.repeat(np.arange(8), 4)[:, None], 8) == pytest.approx(8.0)
    assert V.perplexity(np.zeros((10, 1), dtype=int), 8) == pytest.approx(1.0)


def test_codebook_file_round_trip(tmp_path):
    cb = V.gray_assign(random_codebook(2, 16, 4, seed=8))
    cb.utilization[:] = 0.25
    cb.save(tmp_path / "cb.bin")
    back = V.CodebookSet.load(tmp_path / "cb.bin")
    np.testing.assert_array_equal(back.gray, cb.gray)
    np.testing.assert_allclose(back.codewords, cb.codewords, rtol=1e-6)
    assert back.rho == cb.rho and back.eps == cb.eps
    np.testing.assert_array_equal(back.utilization, cb.utilization)


def test_decoupling_file_round_trip(tmp_path):
    W = np.random.default_rng(0).normal(size=(8, 8))
    V.save_decoupling(tmp_path / "w.bin", W)
    np.testing.assert_allclose(V.load_decoupling(tmp_path / "w.bin"), W, rtol=1e-6)
