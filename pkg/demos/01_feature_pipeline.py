"""
From feature map to transmitted rows
====================================

A synthetic BEV-like map is thinned to its K strongest cells, compressed
channel-wise by the codec, and rebuilt by zero-filled scatter. The MSE at
each stage is the reference the link-level results are compared against.
"""

import numpy as np

from digisem import frontend, pipeline
from digisem.config import Config

cfg = Config({"frontend.codec_fit_maps": 16})
H, W, C = cfg["frontend.height"], cfg["frontend.width"], cfg["frontend.channels"]

# %%
# One map, its cell norms, and the spatial selection mask.

fmap = frontend.synth_feature_map(1, H, W, C)
K = frontend.spatial_k(H, W, cfg["frontend.gamma_s"])
mask = frontend.topk_select(fmap, K)
norms = frontend.cell_norms(fmap)
print(f"map {fmap.shape}, keeping K={K} of {H * W} cells")
print(f"kept norm range {norms[mask == 1].min():.3f}..{norms[mask == 1].max():.3f}, "
      f"largest dropped {norms[mask == 0].max():.3f}")

# %%
# The codec is fitted on other maps, then used on this one.

codec = pipeline.build_codec(cfg)
rows = frontend.gather(fmap, mask)
Z = frontend.codec_encode(rows, codec)
back = frontend.codec_decode(Z, codec)
print(f"rows {rows.shape} -> code {Z.shape} -> rows {back.shape}")

# %%
# Error budget of the lossy stages, all measured against the full map.

zero = np.mean(fmap ** 2)
selected = np.mean((frontend.scatter(rows, mask, H, W) - fmap) ** 2)
coded = np.mean((frontend.scatter(back, mask, H, W) - fmap) ** 2)
print(f"all-zero map      {zero:.3e}")
print(f"selection only    {selected:.3e}")
print(f"selection + codec {coded:.3e}")
