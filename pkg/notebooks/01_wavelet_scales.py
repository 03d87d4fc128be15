"""
Multi-scale views of a traffic feature
======================================

One feature column of a flow sequence is decomposed with db3 and rebuilt
at every level.  R_1 is the signal itself; each later R_j drops one more
band of fine detail.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from msrc.synthetic import burst_labels
from msrc.wavelet import decompose, multiscale, reconstruct_level

OUT = Path(__file__).with_name("output")
OUT.mkdir(exist_ok=True)

# %% a noisy feature with attack bursts on top
rng = np.random.default_rng(0)
labels = burst_labels(800, 0.2, rng)
x = 0.3 + 0.05 * rng.standard_normal(800) + 0.4 * labels

# %% perfect reconstruction at level 1
coeffs = decompose(x, "db3", k=6)
print("max |R_1 - x| =", np.abs(reconstruct_level(coeffs, 1) - x).max())

# %% energy of the removed detail shrinks the signal towards its trend
levels = multiscale(x, "db3", k=6)
for j, r in enumerate(levels, start=1):
    print(f"R_{j}: distance from x {np.linalg.norm(r - x):7.3f}")

fig, axes = plt.subplots(3, 1, figsize=(8, 6), sharex=True)
for ax, j in zip(axes, (1, 3, 6)):
    ax.plot(levels[j - 1], lw=0.8)
    ax.fill_between(range(800), 0, labels * 0.9, color="red", alpha=0.1)
    ax.set_ylabel(f"R_{j}")
axes[-1].set_xlabel("record")
fig.tight_layout()
fig.savefig(OUT / "wavelet_scales.svg")
print("wrote", OUT / "wavelet_scales.svg")
