"""Semantic analog-to-digital converter.

A feature ``z`` of width ``C' = M * L`` goes through the decoupling matrix
``W`` (``z' = W z``), is split into ``M`` sub-vectors of length ``L``, and each
sub-vector is replaced by the index of the codeword with the highest cosine
similarity in its own ``N``-entry codebook. Indices travel as Gray-arranged
``log2(N)``-bit patterns. The receiver looks the indices up and concatenates
the codewords; it does not undo ``W``.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import container
from . import rng as _rng
from .errors import ZeroVectorError

log = logging.getLogger(__name__)


def _is_pow2(n: int) -> bool:
    return n >= 1 and not n & (n - 1)


@dataclass
class CodebookSet:
    """``M`` codebooks of ``N`` codewords of length ``L``.

    ``gray[m, n]`` is the bit pattern (an integer in ``[0, N)``) sent for
    codeword ``n`` of space ``m``; it is the identity until
    :func:`gray_assign` runs.
    """

    codewords: np.ndarray
    utilization: np.ndarray = None
    gray: np.ndarray = None
    rho: float = 0.99
    eps: float = 1e-5

    def __post_init__(self):
        self.codewords = np.asarray(self.codewords, dtype=np.float64)
        if self.codewords.ndim != 3:
            raise ValueError("codewords must be an M x N x L array")
        M, N, _ = self.codewords.shape
        if not _is_pow2(N):
            raise ValueError(f"N must be a power of two, got {N}")
        if self.utilization is None:
            self.utilization = np.zeros((M, N))
        if self.gray is None:
            self.gray = np.tile(np.arange(N), (M, 1))
        self.utilization = np.asarray(self.utilization, dtype=np.float64)
        self.gray = np.asarray(self.gray, dtype=np.int64)
        if self.utilization.shape != (M, N) or self.gray.shape != (M, N):
            raise ValueError("utilization/gray tables must be M x N")
        if not 0 <= self.rho < 1:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        for row in self.gray:
            if not np.array_equal(np.sort(row), np.arange(N)):
                raise ValueError("gray table rows must be permutations of 0..N-1")

    @property
    def M(self) -> int:
        return self.codewords.shape[0]

    @property
    def N(self) -> int:
        return self.codewords.shape[1]

    @property
    def L(self) -> int:
        return self.codewords.shape[2]

    @property
    def bits_per_index(self) -> int:
        return self.N.bit_length() - 1

    @property
    def q(self) -> int:
        return self.M * self.bits_per_index

    @property
    def width(self) -> int:
        return self.M * self.L

    def copy(self) -> "CodebookSet":
        return CodebookSet(self.codewords.copy(), self.utilization.copy(), self.gray.copy(),
                           self.rho, self.eps)

    # Layout after the common magic/version prefix:
    #   u32 M, N, L; f64 rho, eps; then per space: N*L f32 codewords,
    #   N f32 utilizations, N u32 gray patterns.
    def to_bytes(self) -> bytes:
        parts = [container.header(container.MAGIC_CODEBOOK),
                 struct.pack("<3I2d", self.M, self.N, self.L, self.rho, self.eps)]
        for m in range(self.M):
            parts.append(self.codewords[m].astype("<f4").tobytes())
            parts.append(self.utilization[m].astype("<f4").tobytes())
            parts.append(self.gray[m].astype("<u4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CodebookSet":
        r = container.open_reader(data, container.MAGIC_CODEBOOK)
        M, N, L = r.u32s(3)
        rho, eps = r.f64(), r.f64()
        cw, util, gray = [], [], []
        for _ in range(M):
            cw.append(r.array("f4", N * L).reshape(N, L))
            util.append(r.array("f4", N))
            gray.append(r.array("u4", N))
        r.done()
        return cls(np.stack(cw).astype(np.float64), np.stack(util).astype(np.float64),
                   np.stack(gray).astype(np.int64), rho, eps)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "CodebookSet":
        return cls.from_bytes(Path(path).read_bytes())


def identity_decoupling(width: int) -> np.ndarray:
    return np.eye(width)


def save_decoupling(path, W: np.ndarray):
    container.save_tensors(path, container.MAGIC_DECOUPLE, [W])


def load_decoupling(path) -> np.ndarray:
    (W,) = container.load_tensors(path, container.MAGIC_DECOUPLE)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("decoupling matrix must be square")
    return W


def decouple(z: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``z' = W z`` for a vector, or row-wise for a ``(K, C')`` matrix."""
    z = np.asarray(z, dtype=np.float64)
    W = np.asarray(W)
    if W.ndim != 2 or W.shape[0] != W.shape[1] or z.shape[-1] != W.shape[1]:
        raise ValueError(f"cannot apply a {W.shape} decoupling matrix to width {z.shape[-1]}")
    return z @ W.T


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVectorError("cosine similarity is undefined for a zero vector")
    return float(a @ b / (na * nb))


def _unit_rows(x: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroVectorError(f"zero-norm {what}")
    return x / norms


def _split(z: np.ndarray, cb: CodebookSet) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != cb.width:
        raise ValueError(f"feature width {z.shape[-1]} != M*L = {cb.width}")
    return z.reshape(*z.shape[:-1], cb.M, cb.L)


def similarities(z: np.ndarray, cb: CodebookSet) -> np.ndarray:
    """Cosine similarity of every sub-vector to every codeword, ``(..., M, N)``."""
    sub = _unit_rows(_split(z, cb), "sub-vector")
    code = _unit_rows(cb.codewords, "codeword")
    return np.einsum("...ml,mnl->...mn", sub, code)


def quantize(z: np.ndarray, cb: CodebookSet) -> np.ndarray:
    """Codeword indices maximizing cosine similarity; ties go to the smallest
    index. ``(C',) -> (M,)`` or ``(K, C') -> (K, M)``."""
    return np.argmax(similarities(z, cb), axis=-1)


def _check_indices(idx: np.ndarray, cb: CodebookSet) -> np.ndarray:
    idx = np.asarray(idx)
    if idx.shape[-1] != cb.M:
        raise ValueError(f"expected {cb.M} indices per feature, got {idx.shape[-1]}")
    if idx.size and (idx.min() < 0 or idx.max() >= cb.N):
        raise ValueError(f"indices must lie in [0, {cb.N})")
    return idx.astype(np.int64)


def dequantize(idx: np.ndarray, cb: CodebookSet) -> np.ndarray:
    """Concatenate the indexed codewords in space order."""
    idx = _check_indices(idx, cb)
    picked = cb.codewords[np.arange(cb.M), idx]           # (..., M, L)
    return picked.reshape(*idx.shape[:-1], cb.width)


def perplexity(idx: np.ndarray, N: int) -> float:
    """Mean over spaces of ``exp(entropy)`` of the empirical code usage."""
    idx = np.asarray(idx).reshape(-1, np.shape(idx)[-1])
    vals = []
    for m in range(idx.shape[1]):
        p = np.bincount(idx[:, m], minlength=N) / idx.shape[0]
        p = p[p > 0]
        vals.append(math.exp(-float(np.sum(p * np.log(p)))))
    return float(np.mean(vals))


# -- Gray arrangement -----------------------------------------------------------

def gray_code(x):
    return np.asarray(x) ^ (np.asarray(x) >> 1)


def grid_positions(codewords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rank-bin one space's codewords onto a sqrt(N) x sqrt(N) grid.

    Each codeword is projected to ``u`` = mean of its first half and ``v`` =
    mean of its second half. Sorting by ``v`` fills the rows (sqrt(N) per row),
    then ``u`` orders the columns within a row. Ties fall back to the codeword
    index.
    """
    N, L = codewords.shape
    side = math.isqrt(N)
    if side * side != N or not _is_pow2(N):
        raise ValueError(f"N={N} is not a square power of two")
    h = L // 2 if L > 1 else 1
    u = codewords[:, :h].mean(axis=1)
    v = codewords[:, h:].mean(axis=1) if L > 1 else codewords[:, 0]
    ids = np.arange(N)
    by_v = np.lexsort((ids, v))
    row = np.empty(N, dtype=np.int64)
    col = np.empty(N, dtype=np.int64)
    for r in range(side):
        members = by_v[r * side:(r + 1) * side]
        ordered = members[np.lexsort((members, u[members]))]
        row[ordered] = r
        col[ordered] = np.arange(side)
    return row, col


def gray_assign(cb: CodebookSet) -> CodebookSet:
    """Return a copy whose bit patterns are ``gray(row) . gray(col)``."""
    out = cb.copy()
    half = cb.bits_per_index // 2
    for m in range(cb.M):
        row, col = grid_positions(cb.codewords[m])
        out.gray[m] = (gray_code(row) << half) | gray_code(col)
    return out


# -- bit codecs -----------------------------------------------------------------

def indices_to_bits(idx: np.ndarray, cb: CodebookSet) -> np.ndarray:
    """``(K, M)`` indices -> ``(K, q)`` bits, spaces in order, MSB first."""
    idx = _check_indices(idx, cb)
    b = cb.bits_per_index
    patterns = cb.gray[np.arange(cb.M), idx]                          # (K, M)
    bits = (patterns[..., None] >> np.arange(b - 1, -1, -1)) & 1
    return bits.reshape(*idx.shape[:-1], cb.q).astype(np.uint8)


def bits_to_indices(bits: np.ndarray, cb: CodebookSet) -> np.ndarray:
    bits = np.asarray(bits)
    if bits.shape[-1] != cb.q:
        raise ValueError(f"expected {cb.q} bits per feature, got {bits.shape[-1]}")
    b = cb.bits_per_index
    groups = bits.reshape(*bits.shape[:-1], cb.M, b).astype(np.int64)
    patterns = groups @ (1 << np.arange(b - 1, -1, -1))
    inverse = np.argsort(cb.gray, axis=1)                             # pattern -> index
    return inverse[np.arange(cb.M), patterns]


# -- utilization and reinitialization -------------------------------------------

def update_utilization(cb: CodebookSet, counts: np.ndarray, batch: int, per_sample: int) -> CodebookSet:
    """EMA of the fraction of the ``batch * per_sample`` slots each codeword won."""
    if not 0 <= cb.rho < 1:
        raise ValueError(f"rho must lie in [0, 1), got {cb.rho}")
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape != cb.utilization.shape or np.any(counts < 0):
        raise ValueError("counts must be a non-negative M x N array")
    out = cb.copy()
    out.utilization = cb.rho * cb.utilization + (1 - cb.rho) * counts / (batch * per_sample)
    return out


def anchor_probs(e: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Softmax of ``-cosine(anchor_v, e)`` over the anchors."""
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    d = _unit_rows(anchors, "anchor") @ _unit_rows(np.asarray(e, dtype=np.float64), "codeword")
    logits = -d
    p = np.exp(logits - logits.max())
    return p / p.sum()


def reinit_weight(R, N: int, rho: float, eps: float):
    """``exp(-(R * N * 10) / (1 - rho) - eps)``; ~1 for dead codewords."""
    if rho >= 1:
        raise ValueError("rho must be < 1")
    return np.exp(-(np.asarray(R) * N * 10.0) / (1.0 - rho) - eps)


def reinit_codeword(e: np.ndarray, anchor: np.ndarray, w):
    e, anchor = np.asarray(e), np.asarray(anchor)
    if e.shape != anchor.shape:
        raise ValueError("codeword and anchor lengths differ")
    return (1 - w) * e + w * anchor


# -- stage-2 training -----------------------------------------------------------

@dataclass
class ConverterConfig:
    M: int = 4
    N: int = 64
    L: int = 16
    rho: float = 0.99
    eps: float = 1e-5
    anchors: int = 256
    codeword_step: float = 0.1
    w_lr: float = 0.01
    reinit: bool = True
    seed: int = 0


@dataclass
class TrainResult:
    W: np.ndarray
    codebook: CodebookSet
    losses: list = field(default_factory=list)


def init_codebook(cfg: ConverterConfig, scale: float, gen: np.random.Generator) -> CodebookSet:
    cw = gen.normal(0.0, scale / math.sqrt(cfg.L), size=(cfg.M, cfg.N, cfg.L))
    return CodebookSet(cw, rho=cfg.rho, eps=cfg.eps)


def train_step(Z: np.ndarray, W: np.ndarray, cb: CodebookSet, cfg: ConverterConfig,
               gen: np.random.Generator):
    """One batch of reconstruction training. Returns ``(W, cb, loss)``.

    Quantization is treated as the identity when differentiating the MSE with
    respect to ``W``; codewords take an averaging step toward the mean of the
    decoupled sub-vectors assigned to them; then utilization is updated and
    every codeword is pulled toward a sampled anchor with its own weight.
    """
    n = Z.shape[0]
    Zd = decouple(Z, W)
    idx = quantize(Zd, cb)
    Zhat = dequantize(idx, cb)
    err = Zhat - Z
    loss = float(np.mean(err ** 2))

    grad = 2.0 / err.size * err.T @ Z
    W = W - cfg.w_lr * grad

    sub = Zd.reshape(n, cb.M, cb.L)
    codewords = cb.codewords.copy()
    counts = np.zeros((cb.M, cb.N))
    for m in range(cb.M):
        c = np.bincount(idx[:, m], minlength=cb.N).astype(float)
        sums = np.zeros((cb.N, cb.L))
        np.add.at(sums, idx[:, m], sub[:, m])
        used = c > 0
        means = sums[used] / c[used, None]
        codewords[m, used] += cfg.codeword_step * (means - codewords[m, used])
        counts[m] = c
    cb = CodebookSet(codewords, cb.utilization, cb.gray, cb.rho, cb.eps)
    # the batch holds B samples of K features, n = B * K rows
    cb = update_utilization(cb, counts, 1, n)

    if cfg.reinit:
        V = min(cfg.anchors, n)
        pick = gen.choice(n, size=V, replace=False)
        weights = reinit_weight(cb.utilization, cb.N, cb.rho, cb.eps)     # (M, N)
        for m in range(cb.M):
            anchors = sub[pick, m]
            au = _unit_rows(anchors, "anchor")
            cu = _unit_rows(cb.codewords[m], "codeword")
            logits = -(cu @ au.T)                                         # (N, V)
            p = np.exp(logits - logits.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            # inverse-CDF sampling, one anchor per codeword
            u = gen.random(cb.N)
            chosen = np.minimum((np.cumsum(p, axis=1) < u[:, None]).sum(axis=1), V - 1)
            w = weights[m][:, None]
            cb.codewords[m] = reinit_codeword(cb.codewords[m], anchors[chosen], w)
    return W, cb, loss


def train_converter(batches: Iterable[np.ndarray], cfg: ConverterConfig) -> TrainResult:
    """Train the decoupling matrix and codebooks on a stream of ``(B*K, C')``
    batches of frozen upstream features."""
    gen = _rng.substream(cfg.seed, _rng.TRAIN)
    W = identity_decoupling(cfg.M * cfg.L)
    cb = None
    losses = []
    for Z in batches:
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] != cfg.M * cfg.L:
            raise ValueError(f"batches must be n x {cfg.M * cfg.L}, got {Z.shape}")
        if cb is None:
            scale = float(np.sqrt(np.mean(np.sum(Z.reshape(len(Z), cfg.M, cfg.L) ** 2, axis=-1))))
            cb = init_codebook(cfg, scale, _rng.substream(cfg.seed, _rng.INIT))
        W, cb, loss = train_step(Z, W, cb, cfg, gen)
        losses.append(loss)
    if cb is None:
        raise ValueError("empty training stream")
    return TrainResult(W, cb, losses)
