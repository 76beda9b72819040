"""Small deterministic neural-network engine with manual backpropagation."""
from .checkpoint import load, save
from .layers import (LSTM, Activation, AvgPool2D, Conv2D, Dense, Flatten, L2Normalize,
                     MaxPool2D, ShapeError, conv_output_extent)
from .losses import batch_triplet_loss, l2_normalize, mse, triplet_loss
from .model import Sequential, build_embedder, build_predictor
from .optim import AdamState, TrainConfig, optimizer_step

__all__ = [
    "LSTM", "Activation", "AvgPool2D", "Conv2D", "Dense", "Flatten", "L2Normalize",
    "MaxPool2D", "ShapeError", "conv_output_extent", "batch_triplet_loss", "l2_normalize",
    "mse", "triplet_loss", "Sequential", "build_embedder", "build_predictor", "AdamState",
    "TrainConfig", "optimizer_step", "load", "save",
]
