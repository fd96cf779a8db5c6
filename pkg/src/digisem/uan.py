"""Uncertainty-aware gating network.

The per-feature LLR vector (``q`` values) is split into ``M`` groups of
``q / M``. One shared sub-network maps each group to a scalar score, and an
aggregator maps the ``M`` scores to a logit; ``p = sigmoid(logit)`` is the
confidence that the feature was decoded correctly. Hidden layers use ``tanh``;
output layers are linear. LLRs are divided by 30 (the decoder clamp) on the
way in.

Training minimises the semantic-weighted BCE, whose penalty for a wrongly
decoded feature grows with its cosine damage ``d``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import container
from . import rng as _rng
from .converter import cosine_sim

LLR_SCALE = 30.0
P_CLAMP = 1e-7


@dataclass
class UanModel:
    """Weights as lists of ``(W, b)`` pairs, input-to-output."""

    groups: int
    group_width: int
    sub: list
    agg: list
    tau: float = 0.5
    alpha: float = 2.0

    @property
    def q(self) -> int:
        return self.groups * self.group_width

    def params(self) -> list[np.ndarray]:
        return [a for layer in self.sub + self.agg for a in layer]

    def set_params(self, flat: list[np.ndarray]) -> None:
        it = iter(flat)
        self.sub = [(next(it), next(it)) for _ in self.sub]
        self.agg = [(next(it), next(it)) for _ in self.agg]

    def copy(self) -> "UanModel":
        m = UanModel(self.groups, self.group_width, [], [], self.tau, self.alpha)
        m.sub = [(W.copy(), b.copy()) for W, b in self.sub]
        m.agg = [(W.copy(), b.copy()) for W, b in self.agg]
        return m

    # header tensor: [groups, group_width, tau, alpha, n_sub, n_agg]
    def save(self, path) -> None:
        head = np.array([self.groups, self.group_width, self.tau, self.alpha,
                         len(self.sub), len(self.agg)], dtype=float)
        tensors = [head] + [a for W, b in self.sub + self.agg for a in (W, b)]
        container.save_tensors(path, container.MAGIC_UAN, tensors)

    @classmethod
    def load(cls, path) -> "UanModel":
        tensors = container.load_tensors(path, container.MAGIC_UAN)
        head = tensors[0]
        groups, width, n_sub, n_agg = int(head[0]), int(head[1]), int(head[4]), int(head[5])
        rest = tensors[1:]
        if len(rest) != 2 * (n_sub + n_agg):
            raise ValueError("UAN file has the wrong number of tensors")
        layers = [(rest[2 * i], rest[2 * i + 1]) for i in range(n_sub + n_agg)]
        # header tau/alpha are f32 in the file; round-trip them exactly
        return cls(groups, width, layers[:n_sub], layers[n_sub:], float(head[2]), float(head[3]))

    def rounded(self) -> "UanModel":
        """Copy with every weight rounded to float32, i.e. what a save/load returns."""
        m = self.copy()
        m.set_params([a.astype(np.float32).astype(np.float64) for a in m.params()])
        m.tau = float(np.float32(m.tau))
        m.alpha = float(np.float32(m.alpha))
        return m


def init_uan(groups: int, group_width: int, hidden=(16, 16), agg_hidden=(8,),
             seed: int = 0, tau: float = 0.5, alpha: float = 2.0) -> UanModel:
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    gen = _rng.substream(seed, _rng.INIT)

    def mlp(widths):
        return [(gen.normal(0, np.sqrt(1.0 / a), (a, b)), np.zeros(b)) for a, b in zip(widths, widths[1:])]

    return UanModel(groups, group_width, mlp([group_width, *hidden, 1]),
                    mlp([groups, *agg_hidden, 1]), tau, alpha)


def _mlp_forward(x, layers):
    acts = [x]
    for i, (W, b) in enumerate(layers):
        x = x @ W + b
        if i < len(layers) - 1:
            x = np.tanh(x)
        acts.append(x)
    return acts


def _mlp_backward(acts, layers, grad_out):
    grads = [None] * len(layers)
    g = grad_out
    for i in reversed(range(len(layers))):
        W, _ = layers[i]
        if i < len(layers) - 1:
            g = g * (1.0 - acts[i + 1] ** 2)
        a = acts[i].reshape(-1, acts[i].shape[-1])
        gg = g.reshape(-1, g.shape[-1])
        grads[i] = (a.T @ gg, gg.sum(axis=0))
        g = g @ W.T
    return grads, g


def _check_width(llr: np.ndarray, model: UanModel) -> np.ndarray:
    llr = np.asarray(llr, dtype=np.float64)
    if llr.shape[-1] != model.q:
        raise ValueError(f"expected {model.q} LLRs per feature, got {llr.shape[-1]}")
    if not np.all(np.isfinite(llr)):
        raise ValueError("LLRs must be finite")
    return llr


def _forward(llr, model):
    x = (llr / LLR_SCALE).reshape(*llr.shape[:-1], model.groups, model.group_width)
    sub_acts = _mlp_forward(x, model.sub)
    scores = sub_acts[-1][..., 0]                      # (..., M)
    agg_acts = _mlp_forward(scores, model.agg)
    logit = agg_acts[-1][..., 0]
    return logit, sub_acts, agg_acts


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def uan_forward(llr: np.ndarray, model: UanModel):
    """Confidence ``p`` in (0, 1) for one LLR vector or a ``(K, q)`` batch."""
    llr = _check_width(llr, model)
    logit, _, _ = _forward(llr, model)
    p = sigmoid(logit)
    return float(p) if np.ndim(p) == 0 else p


# -- labels and losses --------------------------------------------------------

def make_label(c: np.ndarray, zhat: np.ndarray) -> int:
    """1 iff the reconstructed feature is exactly the transmitted codeword set."""
    c, zhat = np.asarray(c), np.asarray(zhat)
    if c.shape != zhat.shape:
        raise ValueError("length mismatch")
    return int(np.array_equal(c, zhat))


def semantic_damage(c: np.ndarray, zhat: np.ndarray) -> float:
    """``1 - cosine(c, zhat)`` in [0, 2]."""
    if np.array_equal(c, zhat) and np.any(c):
        return 0.0
    return float(np.clip(1.0 - cosine_sim(c, zhat), 0.0, 2.0))


def damages(C: np.ndarray, Zhat: np.ndarray) -> np.ndarray:
    """Row-wise :func:`semantic_damage`, zero where rows match exactly."""
    out = np.array([semantic_damage(c, z) for c, z in zip(C, Zhat)])
    return out


def _clamp(p):
    return np.clip(p, P_CLAMP, 1.0 - P_CLAMP)


def sw_bce(p, y, d, alpha):
    """``-[y log p + (1 - y)(1 + alpha d) log(1 - p)]`` with p clamped."""
    p = _clamp(np.asarray(p, dtype=np.float64))
    out = -(y * np.log(p) + (1 - y) * (1 + alpha * np.asarray(d)) * np.log(1 - p))
    return float(out) if np.ndim(out) == 0 else out


def bce(p, y):
    p = _clamp(np.asarray(p, dtype=np.float64))
    out = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    return float(out) if np.ndim(out) == 0 else out


def sw_bce_batch(p, y, d, alpha) -> float:
    p = np.atleast_1d(p)
    if p.size == 0:
        raise ValueError("empty batch")
    return float(np.mean(sw_bce(p, np.atleast_1d(y), np.atleast_1d(d), alpha)))


def _dloss_dlogit(p, y, weight):
    # derivative through sigmoid; zero where the clamp is active
    g = -y * (1 - p) + (1 - y) * weight * p
    inside = (p > P_CLAMP) & (p < 1 - P_CLAMP)
    return np.where(inside, g, 0.0)


def loss_and_grad(llr, y, d, model: UanModel, alpha: float | None = None):
    """Batch SW-BCE and its gradient w.r.t. ``model.params()`` (same order)."""
    alpha = model.alpha if alpha is None else alpha
    llr = _check_width(llr, model)
    y = np.asarray(y, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    logit, sub_acts, agg_acts = _forward(llr, model)
    p = sigmoid(logit)
    loss = sw_bce_batch(p, y, d, alpha)

    g_logit = _dloss_dlogit(p, y, 1 + alpha * d) / len(y)
    agg_grads, g_scores = _mlp_backward(agg_acts, model.agg, g_logit[:, None])
    sub_grads, _ = _mlp_backward(sub_acts, model.sub, g_scores[..., None])
    return loss, [a for pair in sub_grads + agg_grads for a in pair]


def bce_grad(llr, y, model: UanModel):
    """Plain BCE gradient, independent of the semantic weighting path."""
    llr = _check_width(llr, model)
    y = np.asarray(y, dtype=np.float64)
    logit, sub_acts, agg_acts = _forward(llr, model)
    p = sigmoid(logit)
    g = -y * (1 - p) + (1 - y) * p
    g = np.where((p > P_CLAMP) & (p < 1 - P_CLAMP), g, 0.0) / len(y)
    agg_grads, g_scores = _mlp_backward(agg_acts, model.agg, g[:, None])
    sub_grads, _ = _mlp_backward(sub_acts, model.sub, g_scores[..., None])
    return [a for pair in sub_grads + agg_grads for a in pair]


# -- training ----------------------------------------------------------------

@dataclass
class UanDataset:
    llr: np.ndarray      # (n, q)
    labels: np.ndarray   # (n,)
    damage: np.ndarray   # (n,)
    snr_db: np.ndarray = None

    def __len__(self):
        return len(self.labels)


@dataclass
class UanTrainResult:
    model: UanModel
    losses: list = field(default_factory=list)


def train_uan(data: UanDataset, model: UanModel, epochs: int = 30, batch_size: int = 256,
              lr: float = 3e-3, seed: int = 0) -> UanTrainResult:
    """Minibatch Adam on the batch SW-BCE with ``model.alpha``."""
    if len(data) == 0:
        raise ValueError("empty UAN dataset")
    if np.all(data.labels == data.labels[0]):
        warnings.warn("all UAN training labels are identical; the gate will be uninformative",
                      RuntimeWarning, stacklevel=2)
    gen = _rng.substream(seed, _rng.TRAIN)
    model = model.copy()
    params = model.params()
    m1 = [np.zeros_like(a) for a in params]
    m2 = [np.zeros_like(a) for a in params]
    b1, b2, t = 0.9, 0.999, 0
    losses = []
    n = len(data)
    for _ in range(epochs):
        order = gen.permutation(n)
        epoch_loss = []
        for start in range(0, n, batch_size):
            sel = order[start:start + batch_size]
            loss, grads = loss_and_grad(data.llr[sel], data.labels[sel], data.damage[sel], model)
            t += 1
            for i, g in enumerate(grads):
                m1[i] = b1 * m1[i] + (1 - b1) * g
                m2[i] = b2 * m2[i] + (1 - b2) * g * g
                step = lr * (m1[i] / (1 - b1 ** t)) / (np.sqrt(m2[i] / (1 - b2 ** t)) + 1e-8)
                params[i] = params[i] - step
            model.set_params(params)
            epoch_loss.append(loss * len(sel))
        losses.append(sum(epoch_loss) / n)
    return UanTrainResult(model, losses)


def gate(zhat: np.ndarray, p: np.ndarray, tau: float):
    """Keep rows whose confidence exceeds ``tau``.

    Returns ``(retained_rows, mask, K_kept)``; retained rows keep their order.
    """
    zhat = np.asarray(zhat)
    p = np.asarray(p)
    if len(zhat) != len(p):
        raise ValueError(f"{len(zhat)} features but {len(p)} confidence scores")
    mask = (p > tau).astype(np.uint8)
    return zhat[mask.astype(bool)], mask, int(mask.sum())
