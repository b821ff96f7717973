"""Parameter-holding wrappers around the functional ops in utils.nn_ops."""
import numpy as np

from classes.module import Module, constant_init, uniform_init
from utils.nn_ops import Conv2dParams, LayerNormParams, conv2d, layer_norm, linear
from utils.tensor import Tensor


class Linear(Module):

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, bias: bool = True, dtype=np.float64):
        self.weight = uniform_init(rng, (c_in, c_out), c_in, dtype)
        if bias:
            self.bias = constant_init((c_out,), 0.0, dtype)
        self.c_in, self.c_out = c_in, c_out

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, getattr(self, "bias", None))

    def macs(self, positions: int) -> int:
        return positions * self.c_in * self.c_out


class Conv2d(Module):
    """mode is one of dense, depthwise, pointwise; for depthwise, c_out = c_in * multiplier."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, kernel: int = 1, stride: int = 1,
                 padding: int = 0, mode: str = "dense", bias: bool = True, dtype=np.float64):
        if mode == "pointwise":
            shape, fan_in = (c_in, c_out), c_in
        elif mode == "depthwise":
            if c_out % c_in:
                raise ValueError(f"depthwise output width {c_out} is not a multiple of {c_in}")
            shape, fan_in = (kernel, kernel, c_in, c_out // c_in), kernel * kernel
        else:
            shape, fan_in = (kernel, kernel, c_in, c_out), kernel * kernel * c_in
        self.weight = uniform_init(rng, shape, fan_in, dtype)
        if bias:
            self.bias = constant_init((c_out,), 0.0, dtype)
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.padding, self.mode = kernel, stride, padding, mode

    @property
    def params(self) -> Conv2dParams:
        return Conv2dParams(self.weight, getattr(self, "bias", None), self.stride, self.padding, self.mode)

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.params)

    def macs(self, h_out: int, w_out: int) -> int:
        positions = h_out * w_out
        if self.mode == "pointwise":
            return positions * self.c_in * self.c_out
        if self.mode == "depthwise":
            return positions * self.kernel ** 2 * self.c_out
        return positions * self.kernel ** 2 * self.c_in * self.c_out


class LayerNorm(Module):

    def __init__(self, channels: int, dtype=np.float64, epsilon: float = 1e-5):
        self.gamma = constant_init((channels,), 1.0, dtype)
        self.beta = constant_init((channels,), 0.0, dtype)
        self.epsilon = epsilon

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, LayerNormParams(self.gamma, self.beta, self.epsilon))
