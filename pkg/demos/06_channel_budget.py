"""
Channel-use budgets
===================

How many channel uses each scheme needs for one map, and how the spatial
compression of a competing scheme is adjusted to match a given budget.
"""

from fractions import Fraction

from digisem.pipeline import channel_uses, equalize_budget

H = W = 10
C, q = 64, 24
R, O = Fraction(1, 2), 16

# %%
# The three schemes at gamma_s = 4.

for method in ("digital", "traditional", "asc"):
    print(f"{method:12} {channel_uses(method, H, W, C, 4, q, R, O):6d} uses")

# %%
# Match the analog scheme to the digital budget by compressing harder.

target = channel_uses("digital", H, W, C, 4, q, R, O)
g, uses = equalize_budget(target, "asc", H, W, C)
print(f"digital budget {target}: asc needs gamma_s = {g} ({float(g):.1f}), using {uses}")

# %%
# Denser constellations buy room for more features.

for order in (4, 16, 64):
    print(f"{order:3d}-QAM: digital {channel_uses('digital', H, W, C, 4, q, R, order)} uses")
