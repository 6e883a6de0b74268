"""Differentiable-tensor backend: Tensor/Parameter, ops, gradient checking."""
from .gradcheck import GradCheckReport, GradientCheckError, gradient_check
from .kernels import COMPILED
from .module import Module, uniform_init
from .ops import (add, concat, conv2d, deconv2d, elementwise, graph_aggregate,
                  linear, mean, mul, neg, relu, reshape, sigmoid, softplus,
                  sub, tanh, tsum)
from .tensor import Parameter, ShapeError, Tensor

__all__ = [
    "COMPILED", "GradCheckReport", "GradientCheckError", "Module", "Parameter",
    "ShapeError", "Tensor", "add", "concat", "conv2d", "deconv2d", "elementwise",
    "gradient_check", "graph_aggregate", "linear", "mean", "mul", "neg", "relu",
    "reshape", "sigmoid", "softplus", "sub", "tanh", "tsum", "uniform_init",
]
