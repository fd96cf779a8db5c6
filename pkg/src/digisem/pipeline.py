"""End-to-end link: feature map -> bits -> LDPC/QAM -> channel -> gated features.

A :class:`LinkSystem` bundles the frozen pieces (codec, decoupling matrix,
codebooks, UAN, MCS table) with the config. :func:`run_link` pushes one trial
through it and returns a :class:`MetricsRecord`; :func:`sweep` repeats that
over an SNR grid with per-trial derived seeds, so the result does not depend
on how trials are spread over worker processes.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import channel, converter, frontend, uan
from . import rng as _rng
from .config import Config
from .errors import BudgetError
from .phy import qam
from .phy.amc import McsConfig, amc_select, validate_table
from .phy.framing import frame_pack, frame_unpack
from .phy.ldpc import LdpcCode

CSV_HEADER = ("snr_db", "mcs", "ber", "fer", "feat_err", "retained_frac", "retained_corrupt_frac",
              "mse_gated", "mse_ungated", "channel_uses", "perplexity")

# demapper variance used when a test injects a noiseless channel
_NOISELESS_VAR = 1e-12


@dataclass
class MetricsRecord:
    snr_db: float
    mcs: str
    ber: float
    fer: float
    feat_err: float
    retained_frac: float
    retained_corrupt_frac: float
    mse_gated: float
    mse_ungated: float
    channel_uses: float
    perplexity: float


@dataclass
class LinkSystem:
    cfg: Config
    codec: frontend.CodecWeights
    W: np.ndarray
    codebook: converter.CodebookSet
    model: uan.UanModel | None = None

    def __post_init__(self):
        cb = self.codebook
        if self.cfg["frontend.channels"] != self.codec.channels or self.codec.out_channels != cb.width:
            raise ValueError(f"codec output width {self.codec.out_channels} != converter width {cb.width}")
        if self.W.shape != (cb.width, cb.width):
            raise ValueError("decoupling matrix does not match the codebook width")
        if self.model is not None and (self.model.q != cb.q or self.model.groups != cb.M):
            raise ValueError(f"UAN expects q={self.model.q} with {self.model.groups} groups, "
                             f"converter produces q={cb.q} with M={cb.M}")
        self.table = parse_mcs_table(self.cfg["phy.mcs_table"])

    @property
    def K(self) -> int:
        return frontend.spatial_k(self.cfg["frontend.height"], self.cfg["frontend.width"],
                                  self.cfg["frontend.gamma_s"])

    def mcs_for(self, snr_db: float) -> McsConfig:
        pinned = self.cfg["phy.mcs"]
        if pinned != "auto":
            return McsConfig.parse(pinned)
        return amc_select(snr_db, self.table)

    def code(self, mcs: McsConfig) -> LdpcCode:
        return _code(mcs.rate, self.cfg["phy.max_iter"], self.cfg["phy.scale"])


@lru_cache(maxsize=None)
def _code(rate, max_iter, scale):
    return LdpcCode(rate, max_iter, scale)


def parse_mcs_table(text: str):
    """``"4QAM-1/2:-inf,16QAM-1/2:8,..."`` -> validated ``(McsConfig, threshold)`` tuple."""
    entries = []
    for item in text.split(","):
        name, thr = item.rsplit(":", 1)
        entries.append((McsConfig.parse(name), float(thr)))
    return validate_table(entries)


# -- feature generation -------------------------------------------------------

def map_features(cfg: Config, codec: frontend.CodecWeights, map_seed: int):
    """Synthesize one map and return ``(fmap, mask, Z)``."""
    H, W, C = cfg["frontend.height"], cfg["frontend.width"], cfg["frontend.channels"]
    fmap = frontend.synth_feature_map(map_seed, H, W, C)
    mask = frontend.topk_select(fmap, frontend.spatial_k(H, W, cfg["frontend.gamma_s"]))
    Z = frontend.dither_zeros(frontend.codec_encode(frontend.gather(fmap, mask), codec))
    return fmap, mask, Z


def converter_batches(cfg: Config, codec: frontend.CodecWeights):
    """Training stream for the converter: ``maps_per_step`` maps per batch."""
    seed = cfg["run.seed"]
    for step in range(cfg["converter.train_steps"]):
        Zs = [map_features(cfg, codec, _rng.derive_seed(seed, _rng.TRAIN, step, i))[2]
              for i in range(cfg["converter.maps_per_step"])]
        yield np.concatenate(Zs)


def converter_config(cfg: Config) -> converter.ConverterConfig:
    return converter.ConverterConfig(
        M=cfg["converter.M"], N=cfg["converter.N"], L=cfg["converter.L"], rho=cfg["converter.rho"],
        eps=cfg["converter.eps"], anchors=cfg["converter.anchors"],
        codeword_step=cfg["converter.codeword_step"], w_lr=cfg["converter.w_lr"],
        reinit=cfg["converter.reinit"], seed=cfg["run.seed"])


def fit_codec(F: np.ndarray, gamma_c: int, seed: int = 0) -> frontend.CodecWeights:
    """Codec whose encoder keeps the leading ``C / gamma_c`` principal
    directions (uncentred second moment) of the feature rows ``F``.

    The first mixing map rotates onto the eigenbasis; every later mixing map is
    the identity and every halving map keeps the first half of the channels.
    """
    F = np.asarray(F, dtype=np.float64)
    C = F.shape[1]
    w = frontend.init_codec(C, gamma_c, seed)
    if w.n_blocks == 0:
        return w
    vals, vecs = np.linalg.eigh(F.T @ F)
    basis = vecs[:, ::-1]
    # fix each direction's sign so the result does not depend on LAPACK
    basis = basis * np.where(basis[np.argmax(np.abs(basis), axis=0), np.arange(C)] < 0, -1.0, 1.0)
    for b in range(w.n_blocks):
        c = C >> b
        mix = basis if b == 0 else np.eye(c)
        down = np.eye(c, c // 2)
        w.mix[b], w.down[b] = mix, down
        w.up[b], w.unmix[b] = down.T.copy(), mix.T.copy()
    return w


def build_codec(cfg: Config) -> frontend.CodecWeights:
    """Fit the codec to ``frontend.codec_fit_maps`` maps; 0 keeps the random
    orthonormal initialisation."""
    C, g, seed = cfg["frontend.channels"], cfg["frontend.gamma_c"], cfg["frontend.codec_seed"]
    n_maps = cfg["frontend.codec_fit_maps"]
    if n_maps <= 0:
        return frontend.init_codec(C, g, seed)
    H, W = cfg["frontend.height"], cfg["frontend.width"]
    K = frontend.spatial_k(H, W, cfg["frontend.gamma_s"])
    rows = []
    for i in range(n_maps):
        fmap = frontend.synth_feature_map(_rng.derive_seed(cfg["run.seed"], _rng.INIT, i), H, W, C)
        rows.append(frontend.gather(fmap, frontend.topk_select(fmap, K)))
    # round-trip through float32 so the in-memory codec equals the saved one
    codec = fit_codec(np.concatenate(rows), g, seed)
    for name in ("mix", "down", "up", "unmix"):
        setattr(codec, name, [a.astype(np.float32).astype(np.float64) for a in getattr(codec, name)])
    for ca in codec.down_ca + codec.up_ca:
        for name in ("avg_proj", "max_proj", "scale_gen", "offset_gen"):
            setattr(ca, name, getattr(ca, name).astype(np.float32).astype(np.float64))
    return codec


def train_system(cfg: Config) -> tuple[LinkSystem, list]:
    """Stage-2 converter training followed by Gray assignment; no UAN yet."""
    codec = build_codec(cfg)
    res = converter.train_converter(converter_batches(cfg, codec), converter_config(cfg))
    cb = converter.gray_assign(res.codebook)
    # round to the on-disk precision so in-memory and loaded systems agree
    cb = converter.CodebookSet.from_bytes(cb.to_bytes())
    W = res.W.astype(np.float32).astype(np.float64)
    return LinkSystem(cfg, codec, W, cb), res.losses


# -- transmission ---------------------------------------------------------------

@dataclass
class Transmission:
    idx_tx: np.ndarray
    idx_rx: np.ndarray
    bits_tx: np.ndarray
    bits_rx: np.ndarray
    llr: np.ndarray          # (K, q) posterior LLRs of the feature bits
    blocks_tx: np.ndarray
    blocks_rx: np.ndarray
    parity_ok: np.ndarray
    n_symbols: int
    mcs: McsConfig


def transmit(system: LinkSystem, Z: np.ndarray, snr_db: float, gen: np.random.Generator,
             kind: str | None = None, noise_var: float | None = None) -> Transmission:
    """Quantize ``Z`` and carry its bits over the configured channel."""
    cfg, cb = system.cfg, system.codebook
    idx_tx = converter.quantize(converter.decouple(Z, system.W), cb)
    bits = converter.indices_to_bits(idx_tx, cb)

    mcs = system.mcs_for(snr_db)
    code = system.code(mcs)
    blocks = frame_pack(bits, code.k)
    words = code.encode(blocks)
    syms = qam.modulate(words.ravel(), mcs.order)

    ch = channel.ChannelConfig(kind or cfg["channel.kind"], snr_db, cfg["channel.fading"],
                               cfg["channel.seed"], cfg["channel.snr_convention"])
    rx, h, nv = channel.apply(syms, ch, block_symbols=code.n // mcs.bits_per_symbol,
                              noise_var=noise_var, gen=gen)
    llr = qam.soft_demod(rx, h, nv if nv > 0 else _NOISELESS_VAR, mcs.order).reshape(-1, code.n)
    hard, post, ok, _ = code.decode(llr)
    info_rx = hard[:, :code.k]
    bits_rx, llr_rx = frame_unpack(info_rx, len(Z), cb.q, post[:, :code.k])
    idx_rx = converter.bits_to_indices(bits_rx, cb)
    return Transmission(idx_tx, idx_rx, bits, bits_rx, llr_rx, blocks, info_rx, ok, syms.size, mcs)


def run_link(system: LinkSystem, snr_db: float, seed: int, noise_var: float | None = None,
             gated: bool | None = None) -> MetricsRecord:
    """One trial: ``frontend.maps_per_trial`` maps through the whole chain."""
    cfg, cb = system.cfg, system.codebook
    n_maps = cfg["frontend.maps_per_trial"]
    maps, masks, Zs = [], [], []
    for i in range(n_maps):
        fmap, mask, Z = map_features(cfg, system.codec, _rng.derive_seed(seed, _rng.MAP, i))
        maps.append(fmap)
        masks.append(mask)
        Zs.append(Z)
    Z = np.concatenate(Zs)
    tx = transmit(system, Z, snr_db, _rng.substream(seed, _rng.CHANNEL), noise_var=noise_var)

    correct = np.all(tx.idx_rx == tx.idx_tx, axis=1)
    zhat = converter.dequantize(tx.idx_rx, cb)
    use_gate = (system.model is not None and cfg["uan.enabled"]) if gated is None else gated
    if use_gate:
        p = np.atleast_1d(uan.uan_forward(tx.llr, system.model))
        _, keep, kept = uan.gate(zhat, p, system.model.tau)
        keep = keep.astype(bool)
    else:
        keep, kept = np.ones(len(zhat), dtype=bool), len(zhat)

    K = system.K
    H, W = cfg["frontend.height"], cfg["frontend.width"]
    se_gated, se_ungated = [], []
    for i in range(n_maps):
        rows = slice(i * K, (i + 1) * K)
        z_i, keep_i = zhat[rows], keep[rows]
        full = frontend.codec_decode(z_i, system.codec)
        part = np.zeros_like(full)
        if keep_i.any():
            part[keep_i] = frontend.codec_decode(z_i[keep_i], system.codec)
        se_ungated.append(np.mean((frontend.scatter(full, masks[i], H, W) - maps[i]) ** 2))
        se_gated.append(np.mean((frontend.scatter(part, masks[i], H, W) - maps[i]) ** 2))

    n_corrupt_kept = int(np.sum(keep & ~correct))
    return MetricsRecord(
        snr_db=float(snr_db),
        mcs=str(tx.mcs),
        ber=float(np.mean(tx.bits_rx != tx.bits_tx)),
        fer=float(np.mean(np.any(tx.blocks_rx != tx.blocks_tx, axis=1))),
        feat_err=float(1.0 - np.mean(correct)),
        retained_frac=kept / len(zhat),
        # nothing retained means no corrupted feature got through
        retained_corrupt_frac=n_corrupt_kept / kept if kept else 0.0,
        mse_gated=float(np.mean(se_gated)),
        mse_ungated=float(np.mean(se_ungated)),
        channel_uses=float(tx.n_symbols),
        perplexity=converter.perplexity(tx.idx_tx, cb.N),
    )


# -- UAN training data ------------------------------------------------------------

def uan_dataset(system: LinkSystem, n_frames: int, snr_range=(-10.0, 10.0), seed: int = 0,
                kind: str = "rayleigh") -> uan.UanDataset:
    """Features from fresh maps sent at SNRs drawn uniformly from ``snr_range``."""
    lo, hi = snr_range
    if hi < lo:
        raise ValueError("snr range must be (low, high)")
    cfg, cb = system.cfg, system.codebook
    llrs, labels, dmg, snrs = [], [], [], []
    for f in range(n_frames):
        gen = _rng.substream(seed, _rng.DATA, f)
        snr = float(gen.uniform(lo, hi))
        _, _, Z = map_features(cfg, system.codec, _rng.derive_seed(seed, _rng.DATA, f))
        tx = transmit(system, Z, snr, gen, kind=kind)
        c = converter.dequantize(tx.idx_tx, cb)
        zhat = converter.dequantize(tx.idx_rx, cb)
        y = np.all(tx.idx_rx == tx.idx_tx, axis=1).astype(float)
        d = np.where(y == 1, 0.0, uan.damages(c, zhat))
        llrs.append(tx.llr)
        labels.append(y)
        dmg.append(d)
        snrs.append(np.full(len(y), snr))
    return uan.UanDataset(np.concatenate(llrs), np.concatenate(labels), np.concatenate(dmg),
                          np.concatenate(snrs))


def train_gate(system: LinkSystem) -> tuple[uan.UanModel, list]:
    """Generate the Rayleigh training set and fit the UAN per the config."""
    cfg, cb = system.cfg, system.codebook
    data = uan_dataset(system, cfg["uan.train_frames"], cfg["uan.train_snr_range"], cfg["uan.seed"])
    model = uan.init_uan(cb.M, cb.bits_per_index, cfg["uan.hidden_widths"], cfg["uan.agg_widths"],
                         seed=cfg["uan.seed"], tau=cfg["uan.tau"], alpha=cfg["uan.alpha"])
    res = uan.train_uan(data, model, epochs=cfg["uan.epochs"], batch_size=cfg["uan.batch_size"],
                        lr=cfg["uan.lr"], seed=cfg["uan.seed"])
    return res.model.rounded(), res.losses


# -- channel-use accounting ----------------------------------------------------

def _positive(**kw):
    for name, v in kw.items():
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")


def _log2(order) -> Fraction | float:
    order = int(order)
    if order <= 1:
        raise ValueError("modulation order must exceed 1")
    if order & (order - 1) == 0:
        return Fraction(order.bit_length() - 1)
    return math.log2(order)


def _ceil(x) -> int:
    return math.ceil(x) if isinstance(x, Fraction) else math.ceil(x - 1e-9)


def channel_uses_digital(H, W, C, q, gamma_s, R_c, O_r) -> int:
    """``ceil(H W C q / (C gamma_s R_c log2 O_r))``."""
    _positive(H=H, W=W, C=C, q=q, gamma_s=gamma_s, R_c=R_c)
    num = Fraction(H) * Fraction(W) * Fraction(C) * Fraction(q)
    den = Fraction(C) * Fraction(gamma_s) * Fraction(R_c)
    lg = _log2(O_r)
    return _ceil(num / (den * lg)) if isinstance(lg, Fraction) else _ceil(float(num) / (float(den) * lg))


def channel_uses_traditional(H, W, C, gamma_s, R_c, O_r) -> int:
    """``ceil(8 H W C / (gamma_s R_c log2 O_r))``: 8-bit raw features."""
    _positive(H=H, W=W, C=C, gamma_s=gamma_s, R_c=R_c)
    num = Fraction(H) * Fraction(W) * Fraction(C) * 8
    den = Fraction(gamma_s) * Fraction(R_c)
    lg = _log2(O_r)
    return _ceil(num / (den * lg)) if isinstance(lg, Fraction) else _ceil(float(num) / (float(den) * lg))


def channel_uses_asc(H, W, C, gamma_s) -> int:
    """``ceil(H W C / gamma_s)``: one real feature value per channel use."""
    _positive(H=H, W=W, C=C, gamma_s=gamma_s)
    return _ceil(Fraction(H) * Fraction(W) * Fraction(C) / Fraction(gamma_s))


def channel_uses(method: str, H, W, C, gamma_s, q=None, R_c=None, O_r=None) -> int:
    if method == "digital":
        return channel_uses_digital(H, W, C, q, gamma_s, R_c, O_r)
    if method == "traditional":
        return channel_uses_traditional(H, W, C, gamma_s, R_c, O_r)
    if method == "asc":
        return channel_uses_asc(H, W, C, gamma_s)
    raise ValueError(f"unknown method {method!r}")


def equalize_budget(target: int, method: str, H, W, C, q=None, R_c=None, O_r=None):
    """Smallest ``gamma_s = H W / K`` (largest whole K) whose channel uses fit
    within ``target``. Returns ``(gamma_s, uses)``."""
    for K in range(H * W, 0, -1):
        g = Fraction(H * W, K)
        uses = channel_uses(method, H, W, C, g, q, R_c, O_r)
        if uses <= target:
            return g, uses
    raise BudgetError(f"{method} cannot fit {target} channel uses even with a single feature")


# -- sweeps ---------------------------------------------------------------------

@dataclass
class SweepPoint:
    mean: MetricsRecord
    stderr: MetricsRecord
    trials: int


_NUMERIC = [f.name for f in fields(MetricsRecord) if f.name not in ("snr_db", "mcs")]


def aggregate(records: list[MetricsRecord]) -> SweepPoint:
    """Mean and standard error per field; exact summation keeps it order-free."""
    if not records:
        raise ValueError("nothing to aggregate")
    n = len(records)
    mean, err = {}, {}
    for name in _NUMERIC:
        vals = [getattr(r, name) for r in records]
        mu = math.fsum(vals) / n
        var = math.fsum((v - mu) ** 2 for v in vals) / (n - 1) if n > 1 else 0.0
        mean[name] = mu
        err[name] = math.sqrt(var / n)
    head = dict(snr_db=records[0].snr_db, mcs=records[0].mcs)
    return SweepPoint(MetricsRecord(**head, **mean), MetricsRecord(**head, **err), n)


_WORKER_SYSTEM = None


def _init_worker(system):
    global _WORKER_SYSTEM
    _WORKER_SYSTEM = system


def _trial(args):
    snr, seed = args
    return run_link(_WORKER_SYSTEM, snr, seed)


def trial_seed(base: int, snr_index: int, trial: int) -> int:
    return _rng.derive_seed(base, _rng.DATA, snr_index, trial)


def sweep(system: LinkSystem, snrs=None, trials: int | None = None, jobs: int = 1) -> list[SweepPoint]:
    """Run ``trials`` independent trials at each SNR and aggregate them."""
    cfg = system.cfg
    snrs = cfg["sweep.snr_db"] if snrs is None else tuple(snrs)
    trials = cfg["sweep.trials"] if trials is None else trials
    if not snrs or trials < 1:
        raise ValueError("sweep needs at least one SNR and one trial")
    tasks = [(float(s), trial_seed(cfg["run.seed"], i, t)) for i, s in enumerate(snrs) for t in range(trials)]
    if jobs <= 1:
        _init_worker(system)
        results = [_trial(t) for t in tasks]
    else:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(system,)) as pool:
            results = list(pool.map(_trial, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    return [aggregate(results[i * trials:(i + 1) * trials]) for i in range(len(snrs))]


def csv_row(rec: MetricsRecord) -> list[str]:
    d = asdict(rec)
    return [d["mcs"] if k == "mcs" else repr(float(d[k])) for k in CSV_HEADER]


def sweep_csv(points: list[SweepPoint], which: str = "mean") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for pt in points:
        w.writerow(csv_row(getattr(pt, which)))
    return buf.getvalue()


def write_sweep(points: list[SweepPoint], path) -> tuple[Path, Path]:
    """Means go to ``path``; standard errors to ``<stem>_stderr.csv`` beside it."""
    path = Path(path)
    err = path.with_name(path.stem + "_stderr" + path.suffix)
    path.write_text(sweep_csv(points, "mean"))
    err.write_text(sweep_csv(points, "stderr"))
    return path, err


def default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


# -- artifacts ------------------------------------------------------------------

CODEC_FILE = "codec.bin"
DECOUPLING_FILE = "decoupling.bin"
CODEBOOK_FILE = "codebook.bin"
UAN_FILE = "uan.bin"
ARTIFACT_FILES = (CODEC_FILE, DECOUPLING_FILE, CODEBOOK_FILE, UAN_FILE)


def save_system(system: LinkSystem, directory) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    system.codec.save(d / CODEC_FILE)
    converter.save_decoupling(d / DECOUPLING_FILE, system.W)
    system.codebook.save(d / CODEBOOK_FILE)
    out = [d / CODEC_FILE, d / DECOUPLING_FILE, d / CODEBOOK_FILE]
    if system.model is not None:
        system.model.save(d / UAN_FILE)
        out.append(d / UAN_FILE)
    return out


def has_converter(directory) -> bool:
    d = Path(directory)
    return all((d / f).is_file() for f in (CODEC_FILE, DECOUPLING_FILE, CODEBOOK_FILE))


def load_system(cfg: Config, directory, with_uan: bool = True) -> LinkSystem:
    """Rebuild a system from saved artifacts; the UAN is optional on disk."""
    d = Path(directory)
    if not has_converter(d):
        raise FileNotFoundError(f"{d} has no trained converter ({CODEC_FILE}, {DECOUPLING_FILE}, {CODEBOOK_FILE})")
    model = uan.UanModel.load(d / UAN_FILE) if with_uan and (d / UAN_FILE).is_file() else None
    return LinkSystem(cfg, frontend.CodecWeights.load(d / CODEC_FILE), converter.load_decoupling(d / DECOUPLING_FILE),
                      converter.CodebookSet.load(d / CODEBOOK_FILE), model)


def build_system(cfg: Config, directory=None) -> LinkSystem:
    """Load from ``directory`` when it holds a converter, otherwise train one
    (and the UAN if enabled) in memory from the config alone."""
    if directory is not None and has_converter(directory):
        system = load_system(cfg, directory)
    else:
        system, _ = train_system(cfg)
    if system.model is None and cfg["uan.enabled"]:
        system.model, _ = train_gate(system)
    return system
