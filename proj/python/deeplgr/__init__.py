"""DeepLGR crowd-flow prediction: synthetic data, models, training and metrics."""

from ._core import (
    ConfigError,
    DataError,
    Dataset,
    DivergenceError,
    Model,
    Normalizer,
    ShapeError,
    TrainResult,
    default_config,
    evaluate,
    evaluate_baseline,
    generate,
    load_checkpoint,
    mae,
    predictor_param_counts,
    smape,
    train,
    variant_config,
    variant_names,
)

__version__ = "0.1.0"
