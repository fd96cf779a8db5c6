"""Feature maps, spatial selection and the forward-only compression codec.

Feature maps are ``(H, W, C)`` float arrays. A selection mask is an ``(H, W)``
0/1 array; gathering a map with a mask yields a ``(K, C)`` feature matrix
whose rows follow row-major cell order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import container
from . import rng as _rng

DITHER = 1e-8


def _check_dims(*dims):
    for d in dims:
        if int(d) != d or d < 1:
            raise ValueError(f"dimensions must be positive integers, got {dims}")


def _dictionary(C: int, n_atoms: int, seed: int) -> np.ndarray:
    gen = _rng.substream(seed, _rng.INIT, C, n_atoms)
    atoms = gen.normal(size=(n_atoms, C))
    return atoms / np.linalg.norm(atoms, axis=1, keepdims=True)


def synth_feature_map(seed: int, H: int, W: int, C: int, n_blobs: int | None = None,
                      n_atoms: int = 16, dictionary_seed: int = 0) -> np.ndarray:
    """Deterministic stand-in for a BEV feature map.

    Mostly-empty background (20% of cells carry Gaussian noise of norm about
    0.1) plus Gaussian spatial blobs. Each blob has a unit channel signature
    built from one atom of a fixed dictionary (``dictionary_seed``) plus 30%
    random perturbation, so features cluster the way object classes would. ``seed`` controls placement, size, amplitude and
    perturbation.
    """
    _check_dims(H, W, C)
    gen = _rng.substream(seed, _rng.MAP)
    atoms = _dictionary(C, n_atoms, dictionary_seed)

    active = gen.random((H, W)) < 0.2
    fmap = 0.1 * gen.normal(size=(H, W, C)) / np.sqrt(C) * active[..., None]

    if n_blobs is None:
        n_blobs = max(1, round(H * W / 24))
    rows, cols = np.mgrid[0:H, 0:W]
    for _ in range(n_blobs):
        cy, cx = gen.uniform(0, H), gen.uniform(0, W)
        width = gen.uniform(0.6, 1.5)
        amp = gen.uniform(1.0, 3.0)
        sig = atoms[gen.integers(n_atoms)] + 0.3 * gen.normal(size=C) / np.sqrt(C)
        sig /= np.linalg.norm(sig)
        prof = amp * np.exp(-((rows + 0.5 - cy) ** 2 + (cols + 0.5 - cx) ** 2) / (2 * width ** 2))
        fmap += prof[..., None] * sig
    return fmap


def cell_norms(fmap: np.ndarray) -> np.ndarray:
    return np.linalg.norm(fmap, axis=-1)


def topk_select(fmap: np.ndarray, K: int) -> np.ndarray:
    """Mask of the K cells with the largest channel norm; ties go to the
    smaller row-major index."""
    H, W = fmap.shape[:2]
    if not 1 <= K <= H * W:
        raise ValueError(f"K must lie in [1, {H * W}], got {K}")
    order = np.argsort(-cell_norms(fmap).ravel(), kind="stable")
    mask = np.zeros(H * W, dtype=np.uint8)
    mask[order[:K]] = 1
    return mask.reshape(H, W)


def spatial_k(H: int, W: int, gamma_s: float) -> int:
    """Number of selected cells for spatial compression ratio ``gamma_s``."""
    K = H * W / gamma_s
    if K != int(K) or not 1 <= K <= H * W:
        raise ValueError(f"gamma_s={gamma_s} does not give a whole K for a {H}x{W} map")
    return int(K)


def gather(fmap: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.shape != fmap.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match map {fmap.shape[:2]}")
    return fmap[mask.astype(bool)]


def scatter(features: np.ndarray, mask: np.ndarray, H: int, W: int) -> np.ndarray:
    """Inverse of :func:`gather`; unselected cells are zero."""
    mask = np.asarray(mask).astype(bool)
    if mask.shape != (H, W):
        raise ValueError(f"mask shape {mask.shape} is not {(H, W)}")
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] != mask.sum():
        raise ValueError(f"{features.shape[0] if features.ndim else 0} rows for {mask.sum()} selected cells")
    out = np.zeros((H, W, features.shape[1]), dtype=np.result_type(features, np.float64))
    out[mask] = features
    return out


def dither_zeros(z: np.ndarray, eps: float = DITHER) -> np.ndarray:
    """Replace exact zeros by ``eps`` so no sub-vector has zero norm."""
    return np.where(z == 0, eps, z)


def ca_affine(f: np.ndarray, scale: np.ndarray, offset: np.ndarray) -> np.ndarray:
    f = np.asarray(f)
    scale, offset = np.asarray(scale), np.asarray(offset)
    if scale.shape != (f.shape[-1],) or offset.shape != (f.shape[-1],):
        raise ValueError(f"scale/offset must have length {f.shape[-1]}")
    return scale * f + offset


# -- codec --------------------------------------------------------------------

@dataclass
class CaWeights:
    """Channel-attention generator: pooled context -> per-channel scale/offset.

    ``scale = 1 + w @ scale_gen`` and ``offset = w @ offset_gen`` where
    ``w = [mean_rows(f) @ avg_proj, max_rows(f) @ max_proj]``.
    """

    avg_proj: np.ndarray
    max_proj: np.ndarray
    scale_gen: np.ndarray
    offset_gen: np.ndarray

    def scale_offset(self, f: np.ndarray):
        if f.shape[0] == 0:
            c = self.scale_gen.shape[1]
            return np.ones(c), np.zeros(c)
        w = np.concatenate([f.mean(axis=0) @ self.avg_proj, f.max(axis=0) @ self.max_proj])
        return 1.0 + w @ self.scale_gen, w @ self.offset_gen

    def __call__(self, f):
        return ca_affine(f, *self.scale_offset(f))

    def tensors(self):
        return [self.avg_proj, self.max_proj, self.scale_gen, self.offset_gen]


@dataclass
class CodecWeights:
    """Weights for ``n_blocks = log2(gamma_c)`` down blocks and their mirrors.

    Down block ``b`` works on ``c = C / 2**b`` channels: mixing map ``(c, c)``,
    CA, then a halving map ``(c, c/2)``. Up block ``b`` applies a doubling map
    ``(c/2, c)``, CA, then an un-mixing map ``(c, c)``. Maps act on row
    vectors (``f @ A``).
    """

    channels: int
    gamma_c: int
    mix: list = field(default_factory=list)
    down_ca: list = field(default_factory=list)
    down: list = field(default_factory=list)
    up: list = field(default_factory=list)
    up_ca: list = field(default_factory=list)
    unmix: list = field(default_factory=list)

    @property
    def n_blocks(self) -> int:
        return self.gamma_c.bit_length() - 1

    @property
    def out_channels(self) -> int:
        return self.channels // self.gamma_c

    def validate(self):
        nb = self.n_blocks
        lists = (self.mix, self.down_ca, self.down, self.up, self.up_ca, self.unmix)
        if any(len(x) != nb for x in lists):
            raise ValueError("codec block lists disagree with gamma_c")
        for b in range(nb):
            c = self.channels >> b
            shapes = [(self.mix[b], (c, c)), (self.down[b], (c, c // 2)),
                      (self.up[b], (c // 2, c)), (self.unmix[b], (c, c))]
            for ca in (self.down_ca[b], self.up_ca[b]):
                r = ca.avg_proj.shape[1]
                shapes += [(ca.avg_proj, (c, r)), (ca.max_proj, (c, r)),
                           (ca.scale_gen, (2 * r, c)), (ca.offset_gen, (2 * r, c))]
            for arr, shape in shapes:
                if arr.shape != shape:
                    raise ValueError(f"block {b}: weight shape {arr.shape} != {shape}")

    def save(self, path):
        tensors = [np.array([self.channels, self.gamma_c], dtype=float)]
        for b in range(self.n_blocks):
            tensors += [self.mix[b], *self.down_ca[b].tensors(), self.down[b],
                        self.up[b], *self.up_ca[b].tensors(), self.unmix[b]]
        container.save_tensors(path, container.MAGIC_CODEC, tensors)

    @classmethod
    def load(cls, path) -> "CodecWeights":
        tensors = container.load_tensors(path, container.MAGIC_CODEC)
        C, g = (int(v) for v in tensors[0])
        w = cls(C, g)
        rest = tensors[1:]
        if len(rest) != 12 * w.n_blocks:
            raise ValueError("codec file has the wrong number of tensors")
        for b in range(w.n_blocks):
            t = rest[12 * b:12 * (b + 1)]
            w.mix.append(t[0])
            w.down_ca.append(CaWeights(*t[1:5]))
            w.down.append(t[5])
            w.up.append(t[6])
            w.up_ca.append(CaWeights(*t[7:11]))
            w.unmix.append(t[11])
        w.validate()
        return w


def _check_gamma(gamma_c: int, C: int):
    if gamma_c < 1 or gamma_c & (gamma_c - 1):
        raise ValueError(f"gamma_c must be a power of two, got {gamma_c}")
    if C % gamma_c:
        raise ValueError(f"C={C} is not divisible by gamma_c={gamma_c}")


def _orthonormal(gen, rows: int, cols: int) -> np.ndarray:
    # orthonormal columns if rows >= cols, orthonormal rows otherwise
    a = gen.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def init_codec(C: int, gamma_c: int, seed: int = 0) -> CodecWeights:
    """Seeded orthonormal codec; decoder maps are the encoder transposes and
    CA generators start at zero (identity affine)."""
    _check_gamma(gamma_c, C)
    gen = _rng.substream(seed, _rng.INIT, C, gamma_c)
    w = CodecWeights(C, gamma_c)
    for b in range(w.n_blocks):
        c = C >> b
        r = max(1, c // 8)
        mix = _orthonormal(gen, c, c)
        down = _orthonormal(gen, c, c // 2)

        def ca():
            return CaWeights(_orthonormal(gen, c, r), _orthonormal(gen, c, r),
                             np.zeros((2 * r, c)), np.zeros((2 * r, c)))

        w.mix.append(mix)
        w.down_ca.append(ca())
        w.down.append(down)
        w.up.append(down.T.copy())
        w.up_ca.append(ca())
        w.unmix.append(mix.T.copy())
    return w


def codec_encode(F: np.ndarray, w: CodecWeights) -> np.ndarray:
    """``(K, C) -> (K, C / gamma_c)``."""
    _check_gamma(w.gamma_c, w.channels)
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or F.shape[1] != w.channels:
        raise ValueError(f"expected K x {w.channels} features, got {F.shape}")
    x = F
    for b in range(w.n_blocks):
        x = w.down_ca[b](x @ w.mix[b]) @ w.down[b]
    return x


def codec_decode(Z: np.ndarray, w: CodecWeights) -> np.ndarray:
    """``(K, C / gamma_c) -> (K, C)``, mirroring :func:`codec_encode`."""
    _check_gamma(w.gamma_c, w.channels)
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != w.out_channels:
        raise ValueError(f"expected K x {w.out_channels} features, got {Z.shape}")
    x = Z
    for b in reversed(range(w.n_blocks)):
        x = w.up_ca[b](x @ w.up[b]) @ w.unmix[b]
    return x
