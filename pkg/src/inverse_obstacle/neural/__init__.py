"""Convolutional network mapping the real part of far-field data to shape coefficients."""

from .io import ModelFormatError, load_model, save_model
from .model import (
    CnnArch,
    CnnModel,
    TrainConfig,
    TrainResult,
    backprop,
    cnn_forward,
    evaluate,
    loss_and_grads,
    normalize,
    predict,
    predict_batch,
    train,
)
from .ops import avg_pool, cross_correlate, pad, relu

__all__ = [
    "CnnArch", "CnnModel", "TrainConfig", "TrainResult", "ModelFormatError",
    "avg_pool", "backprop", "cnn_forward", "cross_correlate", "evaluate", "load_model",
    "loss_and_grads", "normalize", "pad", "predict", "predict_batch", "relu",
    "save_model", "train",
]
