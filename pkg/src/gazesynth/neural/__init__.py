"""Small reverse-mode autodiff engine and the layers the GAN needs."""

from .gradcheck import GradientCheckError, gradient_check
from .layers import (
    LSTM,
    BatchNorm1d,
    Conv1d,
    ConvTranspose1d,
    DegenerateBatchError,
    Dense,
    Layer,
    activation,
    batchnorm_forward,
    conv1d_forward,
    conv1d_transpose_forward,
    conv_output_length,
    dense_forward,
    lstm_forward,
    transpose_output_length,
)
from .optim import Adam, AdamState, OptimizerError, adam_step
from .tape import (
    ContractError,
    NonFiniteGradientError,
    Tensor,
    as_tensor,
    clamp,
    exp,
    leaky_relu,
    log,
    magnitude,
    mean,
    relu,
    sigmoid,
    sqrt,
    tanh,
    tape_backward,
)

__all__ = [
    "Adam", "AdamState", "BatchNorm1d", "ContractError", "Conv1d", "ConvTranspose1d",
    "DegenerateBatchError", "Dense", "GradientCheckError", "LSTM", "Layer", "NonFiniteGradientError",
    "OptimizerError", "Tensor", "activation", "adam_step", "as_tensor", "batchnorm_forward", "clamp",
    "conv1d_forward", "conv1d_transpose_forward", "conv_output_length", "dense_forward", "exp",
    "gradient_check", "leaky_relu", "log", "lstm_forward", "magnitude", "mean", "relu", "sigmoid",
    "sqrt", "tanh", "tape_backward", "transpose_output_length",
]
