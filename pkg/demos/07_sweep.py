"""
An SNR sweep end to end
=======================

Train a small system, sweep SNR on Rayleigh block fading, and write the CSV
plus its standard errors. ``digisem sweep`` does the same from a config file.
"""

import tempfile
from pathlib import Path

from digisem import pipeline
from digisem.config import Config

cfg = Config({
    "converter.train_steps": 120, "frontend.codec_fit_maps": 16, "uan.train_frames": 300,
    "sweep.snr_db": "-10,-5,0,5,10,15,20", "sweep.trials": 20,
})
system = pipeline.build_system(cfg)

# %%
# Trials fan out across processes; the result does not depend on how many.

points = pipeline.sweep(system, jobs=pipeline.default_jobs())
print(pipeline.sweep_csv(points), end="")

# %%
# Means and standard errors go to two CSV files with the same header.

out = Path(tempfile.mkdtemp())
for path in pipeline.write_sweep(points, out / "sweep.csv"):
    print("wrote", path)
