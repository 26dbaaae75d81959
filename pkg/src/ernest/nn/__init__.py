"""A small numpy neural-network engine: conv/dense layers, backprop, Adam."""

from .gradcheck import GradCheckReport, gradient_check
from .layers import (
    Conv1D,
    Dense,
    GlobalAveragePool,
    LayerSpec,
    MaxPool1D,
    ReLU,
    Sigmoid,
    Softmax,
    spec_from_dict,
)
from .losses import loss_softmax_ce, loss_sparse_mse
from .network import ActivationRecord, Network, backward, forward
from .optim import Adam
from .persist import load_network, loads_network, dumps_network, save_network
from .training import SoftmaxCE, SparseMSE, train

__all__ = [
    "ActivationRecord", "Adam", "Conv1D", "Dense", "GlobalAveragePool", "GradCheckReport",
    "LayerSpec", "MaxPool1D", "Network", "ReLU", "Sigmoid", "Softmax", "SoftmaxCE",
    "SparseMSE", "backward", "dumps_network", "forward", "gradient_check",
    "load_network", "loads_network", "loss_softmax_ce", "loss_sparse_mse",
    "save_network", "spec_from_dict", "train",
]
