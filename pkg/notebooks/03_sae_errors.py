"""
Reconstruction error as an anomaly signal
=========================================

An SAE fitted to normal traffic only reproduces normal records well.
Anomalies land off its learned manifold, so their error vectors are large.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from msrc.sae import TrainConfig, error_vectors, scaled_dims, train_sae
from msrc.synthetic import two_clusters

OUT = Path(__file__).with_name("output")
OUT.mkdir(exist_ok=True)

rows, labels = two_clusters(2000, 8, seed=0)
dims = scaled_dims(8)
print("layer widths", dims)

sae, history = train_sae(rows[labels == 0], dims, TrainConfig(epochs=30, batch_size=16),
                         TrainConfig(epochs=30, batch_size=16))
print("fine-tune MSE", f"{history['finetune'][0]:.4f} -> {history['finetune'][-1]:.4f}")

# %%
err = error_vectors(sae, rows).sum(axis=1)
print(f"mean error: normal {err[labels == 0].mean():.4f}, anomalous {err[labels == 1].mean():.4f}")

fig, ax = plt.subplots(figsize=(6, 3.5))
bins = np.linspace(0, err.max(), 60)
ax.hist(err[labels == 0], bins, alpha=0.6, label="normal")
ax.hist(err[labels == 1], bins, alpha=0.6, label="anomalous")
ax.set_xlabel("summed |x - x_hat|")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "sae_errors.svg")
print("wrote", OUT / "sae_errors.svg")
