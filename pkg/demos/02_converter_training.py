"""
Training the digital converter
==============================

The converter maps each C'-dimensional feature to M codeword indices. We
train it on codec outputs, look at the loss trace, compare dead-code
behaviour with and without anchor reinitialization, and check that the Gray
grid puts similar codewords at Hamming distance one.
"""

import numpy as np

from digisem import converter as V
from digisem import pipeline
from digisem.config import Config

cfg = Config({"converter.train_steps": 120, "frontend.codec_fit_maps": 16})

# %%
# Train on batches of selected, compressed features.

codec = pipeline.build_codec(cfg)
ccfg = pipeline.converter_config(cfg)
res = V.train_converter(pipeline.converter_batches(cfg, codec), ccfg)
losses = res.losses
print(f"loss {losses[0]:.4e} -> {losses[-1]:.4e} over {len(losses)} steps")

# %%
# Usage on fresh maps: perplexity near N means every codeword is in use.

cb = V.gray_assign(res.codebook)
fresh = np.concatenate([pipeline.map_features(cfg, codec, 10_000 + i)[2] for i in range(20)])
idx = V.quantize(V.decouple(fresh, res.W), cb)
print(f"perplexity {V.perplexity(idx, cb.N):.1f} of {cb.N}")

# %%
# Reinitialization on its own: 64 clusters around one direction. Without it
# a zero-mean random codebook leaves many codewords unused.

gen = np.random.default_rng(1)
mu = np.abs(gen.normal(size=16))
mu /= np.linalg.norm(mu)
U = gen.normal(size=(64, 16))
centers = mu + 0.6 * U / np.linalg.norm(U, axis=1, keepdims=True)


def sample(n, g):
    return centers[g.integers(64, size=n)] + 0.05 * g.normal(size=(n, 16))


test = sample(20_000, np.random.default_rng(9))
for reinit in (True, False):
    g = np.random.default_rng(5)
    r = V.train_converter((sample(512, g) for _ in range(300)),
                          V.ConverterConfig(M=1, N=64, L=16, reinit=reinit, seed=3))
    p = V.perplexity(V.quantize(V.decouple(test, r.W), r.codebook), 64)
    print(f"reinit={reinit!s:5}  perplexity {p:.1f}")

# %%
# Gray grid: one step on the grid flips one bit, and those neighbours are
# closer in angle than random pairs.

for m in range(cb.M):
    E = cb.codewords[m] / np.linalg.norm(cb.codewords[m], axis=1, keepdims=True)
    row, col = V.grid_positions(cb.codewords[m])
    at = {(r, c): i for i, (r, c) in enumerate(zip(row, col))}
    near = [E[i] @ E[at[(r, c + 1)]] for (r, c), i in at.items() if (r, c + 1) in at]
    near += [E[i] @ E[at[(r + 1, c)]] for (r, c), i in at.items() if (r + 1, c) in at]
    sims = E @ E.T
    off = sims[~np.eye(cb.N, dtype=bool)]
    print(f"space {m}: neighbour cosine {np.mean(near):.3f}, random pair {np.mean(off):.3f}")
