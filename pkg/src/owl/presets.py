"""Predictor settings tuned for the Gaussian-blob benchmark (20 + 10 classes, dim 16, separation 6).

The library defaults stay as documented; these only collect the knobs
that matter at this scale.
"""
from __future__ import annotations

from owl.predictors import PredictorConfig


def blob_gmm_config(seed: int = 0) -> PredictorConfig:
    # ~36 labeled points per class in 16 dims: finer FINCH levels leave
    # components with a handful of points and singular covariances
    return PredictorConfig(kind="gmm_finch", finch_partition="coarsest", pool_partition="finest", seed=seed)


def blob_ann_config(seed: int = 0) -> PredictorConfig:
    return PredictorConfig(kind="ann", epochs_per_increment=10, batch_size=32, standardize=True,
                           class_balanced=True, seed=seed)
