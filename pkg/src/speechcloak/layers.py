"""Thin layer objects over the autodiff ops: parameter containers plus a
forward(x, train) method.  Initialization is uniform fan-in scaled and fully
determined by the rng passed in."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


def _uniform_fan_in(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    def parameters(self):
        return []

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        raise NotImplementedError

    def named_parameters(self, prefix=""):
        return [(p.name, p) for p in self.parameters()]


class Conv2d(Layer):
    def __init__(self, in_ch, out_ch, kernel=(3, 3), stride=(1, 1), padding=(0, 0),
                 rng=None, name="conv"):
        kh, kw = kernel
        fan_in = in_ch * kh * kw
        self.weight = Parameter(_uniform_fan_in(rng, (out_ch, in_ch, kh, kw), fan_in),
                                name=f"{name}.weight")
        self.bias = Parameter(_uniform_fan_in(rng, (out_ch,), fan_in), name=f"{name}.bias")
        self.stride = tuple(stride)
        self.padding = tuple(padding)

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x, train=False):
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Layer):
    def __init__(self, in_ch, out_ch, kernel=(3, 3), stride=(2, 2), padding=(0, 0),
                 output_padding=(0, 0), rng=None, name="convt"):
        kh, kw = kernel
        fan_in = in_ch * kh * kw
        self.weight = Parameter(_uniform_fan_in(rng, (in_ch, out_ch, kh, kw), fan_in),
                                name=f"{name}.weight")
        self.bias = Parameter(_uniform_fan_in(rng, (out_ch,), fan_in), name=f"{name}.bias")
        self.stride = tuple(stride)
        self.padding = tuple(padding)
        self.output_padding = tuple(output_padding)

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x, train=False):
        return ad.conv_transpose2d(x, self.weight, self.bias, stride=self.stride,
                                   padding=self.padding, output_padding=self.output_padding)


class BatchNorm2d(Layer):
    def __init__(self, channels, momentum=0.1, eps=1e-5, name="bn"):
        self.gamma = Parameter(np.ones(channels), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels), name=f"{name}.beta")
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def parameters(self):
        return [self.gamma, self.beta]

    def forward(self, x, train=False):
        return ad.batch_norm2d(x, self.gamma, self.beta, self.running_mean,
                               self.running_var, train, self.momentum, self.eps)

    def state_arrays(self):
        # running stats ride along in checkpoints but are not trained
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class PReLU(Layer):
    def __init__(self, init=0.25, name="prelu"):
        self.slope = Parameter(np.asarray(init), name=f"{name}.slope")

    def parameters(self):
        return [self.slope]

    def forward(self, x, train=False):
        return ad.prelu(x, self.slope)


class LeakyReLU(Layer):
    def __init__(self, slope=0.01):
        self.slope = slope

    def forward(self, x, train=False):
        return ad.leaky_relu(x, self.slope)


class Tanh(Layer):
    def forward(self, x, train=False):
        return ad.tanh(x)


class ReflectionPad2d(Layer):
    def __init__(self, padding=(1, 1)):
        self.padding = tuple(padding)

    def forward(self, x, train=False):
        return ad.reflection_pad2d(x, self.padding)


class Linear(Layer):
    def __init__(self, in_features, out_features, rng=None, name="linear"):
        self.weight = Parameter(_uniform_fan_in(rng, (in_features, out_features), in_features),
                                name=f"{name}.weight")
        self.bias = Parameter(_uniform_fan_in(rng, (out_features,), in_features),
                              name=f"{name}.bias")

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x, train=False):
        return ad.add(ad.matmul(x, self.weight), self.bias)


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def bn_layers(self):
        return [l for l in self.layers if isinstance(l, BatchNorm2d)]
