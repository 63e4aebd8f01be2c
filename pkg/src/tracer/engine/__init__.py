"""Minimal float64 sequential network engine."""

from tracer.engine.builders import convnet, mlp
from tracer.engine.layers import (
    Conv2d, ConvTranspose2d, Dense, Flatten, Identity, Layer, LeakyReLU, MaxPool2d,
    NotDifferentiableError, ReLU, Reshape, ShapeError, Sigmoid, Softmax, Tanh, flops,
)
from tracer.engine.model import Tape, TappedModel, default_tap_points, gradients
from tracer.engine.optim import Adam
from tracer.engine.serialize import ContainerError, load_model, save_model
from tracer.engine.train import TrainConfig, TrainedModel, TrainingDivergedError, accuracy, train_classifier

__all__ = [
    "Adam", "ContainerError", "Conv2d", "ConvTranspose2d", "Dense", "Flatten", "Identity", "Layer",
    "LeakyReLU", "MaxPool2d", "NotDifferentiableError", "ReLU", "Reshape", "ShapeError", "Sigmoid",
    "Softmax", "Tanh", "Tape", "TappedModel", "TrainConfig", "TrainedModel", "TrainingDivergedError",
    "accuracy", "convnet", "default_tap_points", "flops", "gradients", "load_model", "mlp",
    "save_model", "train_classifier",
]
