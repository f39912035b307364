from .im2col import conv_output_size, im2col, col2im
from .layers import Conv2D, Dense, MaxPool2D, ReLU, SoftmaxCrossEntropy
from .network import Network, NetworkSpec, SgdConfig
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "conv_output_size",
    "im2col",
    "col2im",
    "Conv2D",
    "Dense",
    "MaxPool2D",
    "ReLU",
    "SoftmaxCrossEntropy",
    "Network",
    "NetworkSpec",
    "SgdConfig",
    "GradCheckReport",
    "grad_check",
]
