"""
Train, score and cross-validate
===============================

The full classifier on a synthetic flow file: windowing, per-scale SAEs,
residual groups and the sigmoid head, then a stratified ten-fold run.
"""

from pathlib import Path

from msrc import pipeline
from msrc.config import parse_text
from msrc.synthetic import write_split

OUT = Path(__file__).with_name("output")
train, test = write_split(OUT / "data", n_train=2000, n_test=1000, d=8, seed=0)

cfg = parse_text(f"""
[data]
train_path = {train}
test_path = {test}
schema = synthetic
max_train = 0
max_test = 0
[window]
sw = 32
k = 3
[sae]
pretrain_epochs = 10
finetune_epochs = 10
batch_size = 32
[residual]
epochs = 10
channels = 4
group_width = 8
[run]
out_dir = {OUT / 'run'}
""")

# %% one train/test run
result = pipeline.run_pipeline(cfg)
print(f"test accuracy {result.report.accuracy:.4f}, AUC {result.report.auc:.4f}")
print("artifacts:", ", ".join(p.name for p in result.artifacts))

# %% ten folds over windows of the training file
cv, paths = pipeline.run_experiment1(cfg)
for row in cv.rows:
    print(row["fold"].rjust(7), " ".join(f"{row[c]:.4f}" for c in pipeline.CV_COLUMNS[1:]))
print("wrote", paths[0])
