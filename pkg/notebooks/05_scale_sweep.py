"""
Window size against decomposition depth
=======================================

Accuracy over an (sw, k) grid on clusters that overlap enough for the
choice to matter.  Cells with k above floor(log2(sw)) are skipped.
"""

import warnings
from pathlib import Path

from msrc import pipeline
from msrc.config import SweepGrid, parse_text
from msrc.synthetic import write_split

OUT = Path(__file__).with_name("output")
train, test = write_split(OUT / "overlap", n_train=2000, n_test=1000, d=8, seed=0, separation=0.04)

cfg = parse_text(f"""
[data]
train_path = {train}
test_path = {test}
schema = synthetic
max_train = 0
max_test = 0
[sae]
pretrain_epochs = 10
finetune_epochs = 10
batch_size = 32
[residual]
epochs = 10
channels = 4
group_width = 8
[run]
out_dir = {OUT / 'sweep'}
""")
grid = SweepGrid(sw=(8, 32, 128), k=(2, 4, 6))

with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    result = pipeline.run_sweep(cfg, grid)
for w in caught:
    print("warning:", w.message)

for row in result.rows:
    acc = "skipped" if row["status"] != "ok" else f"{row['mean_accuracy']:.4f}"
    print(f"sw={row['sw']:>4} k={row['k']}  {acc}")
print(f"spearman(k, accuracy) = {result.spearman_k:.3f}")
for p in pipeline.export_sweep(result, OUT / "sweep", cfg, grid):
    print("wrote", p)
