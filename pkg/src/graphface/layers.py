"""Parameterized layer wrappers around the backend ops."""
import numpy as np

from .backend import Module, Parameter, uniform_init
from .backend.ops import conv2d, deconv2d, linear, relu
from .patchgraph import default_adjacency, igcn_layer


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, rng, kernel=3, stride=1, padding=1, dtype=np.float32):
        self.weight = Parameter(uniform_init(rng, (out_ch, in_ch, kernel, kernel),
                                             in_ch * kernel * kernel, dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype))
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Deconv2d(Module):
    def __init__(self, in_ch, out_ch, rng, kernel=3, stride=1, padding=1, dtype=np.float32):
        self.weight = Parameter(uniform_init(rng, (in_ch, out_ch, kernel, kernel),
                                             in_ch * kernel * kernel, dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype))
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return deconv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, dtype=np.float32):
        self.weight = Parameter(uniform_init(rng, (in_dim, out_dim), in_dim, dtype))
        self.bias = Parameter(np.zeros(out_dim, dtype=dtype))

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class PatchGraphConv(Module):
    """One graph convolution layer over a k*k patch grid with shared weights.

    ``adjacency`` is a NormalizedAdjacency; defaults per grid size when None.
    mode='deconv' uses a transposed convolution per patch.
    """

    def __init__(self, in_ch, out_ch, k, rng, adjacency=None, mode="conv",
                 kernel=3, stride=1, padding=1, dtype=np.float32):
        if adjacency is None:
            adjacency = default_adjacency(k)
        if mode == "conv":
            wshape = (out_ch, in_ch, kernel, kernel)
        else:
            wshape = (in_ch, out_ch, kernel, kernel)
        self.weight = Parameter(uniform_init(rng, wshape, in_ch * kernel * kernel, dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype))
        self.k = k
        self.adjacency = adjacency
        self.mode = mode
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return igcn_layer(x, self.weight, self.bias, self.adjacency, self.k,
                          mode=self.mode, stride=self.stride, padding=self.padding)

    def is_plain_conv(self):
        """True when this layer degenerates to a standard convolution path."""
        return self.k == 1 and np.array_equal(self.adjacency.weights, np.eye(1))


def relu_chain(x, layers):
    for layer in layers:
        x = relu(layer(x))
    return x
