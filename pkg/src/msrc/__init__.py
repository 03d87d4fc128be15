"""Multi-scale residual classifier (MSRC) for network-traffic anomaly detection."""

from .config import ExperimentConfig, SweepGrid, parse_config, serialize
from .evaluation import MetricsReport, confusion, evaluate, kfold_split, metrics, roc_auc
from .ingest import FeatureMatrix, anonymize, clean, encode_categorical, load_dataset, normalize, preset_schema
from .pipeline import run_cv, run_experiment1, run_pipeline, run_sweep
from .residual_net import MSRC, classify, train_supervised
from .sae import StackedAutoencoder, fine_tune, pretrain_layerwise, reconstruction_error
from .wavelet import decompose, make_filter, reconstruct_level, window_multiscale

__version__ = "0.1.0"
