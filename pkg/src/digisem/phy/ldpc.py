"""Quasi-cyclic LDPC codes (n = 1296, Z = 54) with a normalized min-sum decoder.

The four parity-check matrices are the 802.11 block-circulant prototypes for
the 1296-bit codeword. Entry ``s >= 0`` stands for the 54x54 identity whose
columns are cyclically shifted right by ``s``; ``-1`` is the all-zero block.

Codewords are systematic: the first ``k`` bits are the information bits and
the trailing ``n - k`` bits are parity. LLRs are positive when bit 0 is more
likely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

BLOCK_LENGTH = 1296
LIFTING = 54
LLR_CLAMP = 30.0

_PROTO_1_2 = """
40 -1 -1 -1 22 -1 49 23 43 -1 -1 -1  1  0 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1
50  1 -1 -1 48 35 -1 -1 13 -1 30 -1 -1  0  0 -1 -1 -1 -1 -1 -1 -1 -1 -1
39 50 -1 -1  4 -1  2 -1 -1 -1 -1 49 -1 -1  0  0 -1 -1 -1 -1 -1 -1 -1 -1
33 -1 -1 38 37 -1 -1  4  1 -1 -1 -1 -1 -1 -1  0  0 -1 -1 -1 -1 -1 -1 -1
45 -1 -1 -1  0 22 -1 -1 20 42 -1 -1 -1 -1 -1 -1  0  0 -1 -1 -1 -1 -1 -1
51 -1 -1 48 35 -1 -1 -1 44 -1 18 -1 -1 -1 -1 -1 -1  0  0 -1 -1 -1 -1 -1
47 11 -1 -1 -1 17 -1 -1 51 -1 -1 -1  0 -1 -1 -1 -1 -1  0  0 -1 -1 -1 -1
 5 -1 25 -1  6 -1 45 -1 13 40 -1 -1 -1 -1 -1 -1 -1 -1 -1  0  0 -1 -1 -1
33 -1 -1 34 24 -1 -1 -1 23 -1 -1 46 -1 -1 -1 -1 -1 -1 -1 -1  0  0 -1 -1
 1 -1 27 -1  1 -1 -1 -1 38 -1 44 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1  0  0 -1
-1 18 -1 -1 23 -1 -1  8  0 35 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1  0  0
49 -1 17 -1 30 -1 -1 -1 34 -1 -1 19  1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1  0
"""

_PROTO_2_3 = """
39 31 22 43 -1 40  4 -1 11 -1 -1 50 -1 -1 -1  6  1  0 -1 -1 -1 -1 -1 -1
25 52 41  2  6 -1 14 -1 34 -1 -1 -1 24 -1 37 -1 -1  0  0 -1 -1 -1 -1 -1
43 31 29  0 21 -1 28 -1 -1  2 -1 -1  7 -1 17 -1 -1 -1  0  0 -1 -1 -1 -1
20 33 48 -1  4 13 -1 26 -1 -1 22 -1 -1 46 42 -1 -1 -1 -1  0  0 -1 -1 -1
45  7 18 51 12 25 -1 -1 -1 50 -1 -1  5 -1 -1 -1  0 -1 -1 -1  0  0 -1 -1
35 40 32 16  5 -1 -1 18 -1 -1 43 51 -1 32 -1 -1 -1 -1 -1 -1 -1  0  0 -1
 9 24 13 22 28 -1 -1 37 -1 -1 25 -1 -1 52 -1 13 -1 -1 -1 -1 -1 -1  0  0
32 22  4 21 16 -1 -1 -1 27 28 -1 38 -1 -1 -1  8  1 -1 -1 -1 -1 -1 -1  0
"""

_PROTO_3_4 = """
39 40 51 41  3 29  8 36 -1 14 -1  6 -1 33 -1 11 -1  4  1  0 -1 -1 -1 -1
48 21 47  9 48 35 51 -1 38 -1 28 -1 34 -1 50 -1 50 -1 -1  0  0 -1 -1 -1
30 39 28 42 50 39  5 17 -1  6 -1 18 -1 20 -1 15 -1 40 -1 -1  0  0 -1 -1
29  0  1 43 36 30 47 -1 49 -1 47 -1  3 -1 35 -1 34 -1  0 -1 -1  0  0 -1
 1 32 11 23 10 44 12  7 -1 48 -1  4 -1  9 -1 17 -1 16 -1 -1 -1 -1  0  0
13  7 15 47 23 16 47 -1 43 -1 29 -1 52 -1  2 -1 53 -1  1 -1 -1 -1 -1  0
"""

_PROTO_5_6 = """
48 29 37 52  2 16  6 14 53 31 34  5 18 42 53 31 45 -1 46 52  1  0 -1 -1
17  4 30  7 43 11 24  6 14 21  6 39 17 40 47  7 15 41 19 -1 -1  0  0 -1
 7  2 51 31 46 23 16 11 53 40 10  7 46 53 33 35 -1 25 35 38  0 -1  0  0
19 48 41  1 10  7 36 47  5 29 52 52 31 10 26  6  3  2 -1 51  1 -1 -1  0
"""

PROTOTYPES = {
    Fraction(1, 2): _PROTO_1_2,
    Fraction(2, 3): _PROTO_2_3,
    Fraction(3, 4): _PROTO_3_4,
    Fraction(5, 6): _PROTO_5_6,
}

RATES = tuple(PROTOTYPES)


def parse_rate(rate) -> Fraction:
    """Accept ``"3/4"``, ``0.75`` or a Fraction and return a supported rate."""
    r = Fraction(rate).limit_denominator(12) if not isinstance(rate, str) else Fraction(rate)
    if r not in PROTOTYPES:
        raise ValueError(f"unsupported code rate {rate!r}; choose from {[str(x) for x in RATES]}")
    return r


def prototype(rate) -> np.ndarray:
    """Shift-coefficient table for ``rate`` (rows x 24, -1 for zero blocks)."""
    text = PROTOTYPES[parse_rate(rate)]
    return np.array([[int(t) for t in line.split()] for line in text.strip().splitlines()])


def dump_prototypes() -> str:
    """Text dump of all four prototype matrices, one header line per rate."""
    out = []
    for r in RATES:
        proto = prototype(r)
        out.append(f"# rate {r} n={BLOCK_LENGTH} Z={LIFTING} rows={proto.shape[0]} cols={proto.shape[1]}")
        out.extend(" ".join(f"{v:3d}" for v in row) for row in proto)
    return "\n".join(out) + "\n"


def expand(proto: np.ndarray, z: int = LIFTING) -> np.ndarray:
    """Lift a prototype into the binary parity-check matrix."""
    mb, nb = proto.shape
    H = np.zeros((mb * z, nb * z), dtype=np.uint8)
    eye = np.eye(z, dtype=np.uint8)
    for i in range(mb):
        for j in range(nb):
            s = proto[i, j]
            if s >= 0:
                H[i * z:(i + 1) * z, j * z:(j + 1) * z] = np.roll(eye, s, axis=1)
    return H


def _gf2_inv(A: np.ndarray) -> np.ndarray:
    """Inverse of a square binary matrix over GF(2) by Gauss-Jordan elimination."""
    n = A.shape[0]
    M = np.concatenate([A.astype(bool), np.eye(n, dtype=bool)], axis=1)
    for col in range(n):
        pivots = np.nonzero(M[col:, col])[0]
        if pivots.size == 0:
            raise ValueError("matrix is singular over GF(2)")
        p = col + pivots[0]
        if p != col:
            M[[col, p]] = M[[p, col]]
        rows = np.nonzero(M[:, col])[0]
        rows = rows[rows != col]
        M[rows] ^= M[col]
    return M[:, n:].astype(np.uint8)


@dataclass(frozen=True)
class LdpcCode:
    """One member of the n=1296 code family.

    ``max_iter`` and ``scale`` configure the normalized min-sum decoder.
    """

    rate: Fraction
    max_iter: int = 30
    scale: float = 0.8
    n: int = field(init=False)
    k: int = field(init=False)
    H: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rate = parse_rate(self.rate)
        object.__setattr__(self, "rate", rate)
        H = expand(prototype(rate))
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "n", H.shape[1])
        object.__setattr__(self, "k", H.shape[1] - H.shape[0])
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    @property
    def m(self) -> int:
        return self.n - self.k

    # -- encoding -------------------------------------------------------

    def encode(self, info: np.ndarray) -> np.ndarray:
        """Systematic encoding of one ``k``-bit block or a ``(B, k)`` batch."""
        info = np.asarray(info)
        if info.shape[-1] != self.k or info.ndim not in (1, 2):
            raise ValueError(f"expected {self.k} information bits per block, got shape {info.shape}")
        if np.any((info != 0) & (info != 1)):
            raise ValueError("information bits must be 0/1")
        P = _parity_generator(self.rate)
        parity = (info.astype(np.float32) @ P.T.astype(np.float32)).astype(np.int64) & 1
        return np.concatenate([info.astype(np.uint8), parity.astype(np.uint8)], axis=-1)

    def syndrome(self, bits: np.ndarray) -> np.ndarray:
        """``H c^T`` over GF(2); works for one word or a batch."""
        bits = np.asarray(bits, dtype=np.float32)
        return ((bits @ self.H.T.astype(np.float32)).astype(np.int64) & 1).astype(np.uint8)

    # -- decoding -------------------------------------------------------

    def decode(self, llr: np.ndarray):
        """Normalized min-sum decoding.

        Args:
            llr: channel LLRs, shape ``(n,)`` or ``(B, n)``.

        Returns:
            ``(hard, posterior, parity_ok, iterations)``. ``hard`` is the
            full n-bit word (systematic part first), ``posterior`` the final
            total beliefs clamped to +/-30. Decoding failure shows up as
            ``parity_ok == False``; it is not an exception.
        """
        llr = np.asarray(llr, dtype=np.float64)
        single = llr.ndim == 1
        if single:
            llr = llr[None]
        if llr.ndim != 2 or llr.shape[1] != self.n:
            raise ValueError(f"expected {self.n} LLRs per block, got shape {llr.shape}")
        if not np.all(np.isfinite(llr)):
            raise ValueError("LLRs must be finite")

        hard, post, ok, iters = _min_sum(_graph(self.rate), llr, self.max_iter, self.scale)
        if single:
            return hard[0], post[0], bool(ok[0]), int(iters[0])
        return hard, post, ok, iters


@lru_cache(maxsize=None)
def _parity_generator(rate: Fraction) -> np.ndarray:
    # p = Hp^-1 Hs s over GF(2)
    H = expand(prototype(rate))
    m, n = H.shape
    k = n - m
    Hp_inv = _gf2_inv(H[:, k:])
    P = (Hp_inv.astype(np.int64) @ H[:, :k].astype(np.int64)) & 1
    return P.astype(np.uint8)


@dataclass(frozen=True)
class _Graph:
    n: int
    m: int
    chk_vars: np.ndarray   # (dc, m) variable index per check slot, n for padding
    chk_pad: np.ndarray    # (dc, m) True on padding slots
    var_slots: np.ndarray  # (dv, n) flat slot index per variable, dc*m for padding


@lru_cache(maxsize=None)
def _graph(rate: Fraction) -> _Graph:
    H = expand(prototype(rate))
    m, n = H.shape
    rows = [np.nonzero(H[i])[0] for i in range(m)]
    dc = max(len(r) for r in rows)
    chk_vars = np.full((dc, m), n, dtype=np.intp)
    for i, r in enumerate(rows):
        chk_vars[:len(r), i] = r
    chk_pad = chk_vars == n

    slots_per_var = [[] for _ in range(n)]
    for s, v in enumerate(chk_vars.ravel()):
        if v < n:
            slots_per_var[v].append(s)
    dv = max(len(s) for s in slots_per_var)
    var_slots = np.full((dv, n), dc * m, dtype=np.intp)
    for v, s in enumerate(slots_per_var):
        var_slots[:len(s), v] = s
    return _Graph(n, m, chk_vars, chk_pad, var_slots)


def _min_sum(g: _Graph, llr: np.ndarray, max_iter: int, scale: float):
    # batch is the trailing (contiguous) axis, so reductions over check or
    # variable degree become elementwise passes over (m, B) / (n, B) slabs
    B = llr.shape[0]
    dc, m = g.chk_vars.shape
    big = np.float32(1e30)
    scale = np.float32(scale)

    hard_out = np.zeros((B, g.n), dtype=np.uint8)
    post_out = np.zeros((B, g.n), dtype=np.float64)
    ok_out = np.zeros(B, dtype=bool)
    it_out = np.full(B, max_iter, dtype=np.int64)

    active = np.arange(B)
    L = np.ascontiguousarray(llr.T, dtype=np.float32)          # (n, B)
    c2v = np.zeros((dc * m + 1, B), dtype=np.float32)            # last row stays 0
    total = L.copy()
    pad_rows = [np.nonzero(g.chk_pad[j])[0] for j in range(dc)]

    for it in range(1, max_iter + 1):
        nb = total.shape[1]
        tot_ext = np.concatenate([total, np.full((1, nb), big, dtype=np.float32)])
        v2c = tot_ext[g.chk_vars] - c2v[:-1].reshape(dc, m, nb)   # (dc, m, B)
        for j, rows in enumerate(pad_rows):
            if rows.size:
                v2c[j, rows] = big

        neg = v2c < 0
        mag = np.abs(v2c)
        parity = neg[0].copy()
        min1 = mag[0].copy()
        min2 = np.full_like(min1, big)
        for j in range(1, dc):
            parity ^= neg[j]
            np.minimum(min2, np.maximum(min1, mag[j]), out=min2)
            np.minimum(min1, mag[j], out=min1)
        out = np.where(mag == min1, min2, min1)
        out *= scale
        out = np.where(neg ^ parity, -out, out)
        for j, rows in enumerate(pad_rows):
            if rows.size:
                out[j, rows] = 0.0
        c2v[:-1] = out.reshape(dc * m, nb)

        gathered = c2v[g.var_slots]                               # (dv, n, B)
        total = L + gathered.sum(axis=0)

        hard = total < 0
        hard_ext = np.concatenate([hard, np.zeros((1, nb), dtype=bool)])
        hv = hard_ext[g.chk_vars]
        synd = hv[0].copy()
        for j in range(1, dc):
            synd ^= hv[j]
        unsat = synd.any(axis=0)
        done = ~unsat if it < max_iter else np.ones(nb, dtype=bool)
        if done.any():
            idx = active[done]
            hard_out[idx] = hard[:, done].T
            post_out[idx] = np.clip(total[:, done].T, -LLR_CLAMP, LLR_CLAMP)
            ok_out[idx] = ~unsat[done]
            it_out[idx] = it
            keep = ~done
            active = active[keep]
            if active.size == 0:
                break
            L, c2v, total = L[:, keep], c2v[:, keep], total[:, keep]

    return hard_out, post_out, ok_out, it_out
