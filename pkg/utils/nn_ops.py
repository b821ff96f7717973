"""
Neural primitives on channels-last tensors (..., H, W, C); the leading axes
(a batch axis, or none) are carried through untouched.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax as _log_softmax
from scipy.special import softmax as _softmax

from utils.errors import DatasetError, ShapeMismatchError
from utils.tensor import (Tensor, record_op, add, concat, gelu, matmul, reduce_mean, relu, sigmoid, silu,
                          slice_axis, take)

CONV_MODES = ("depthwise", "pointwise", "dense")


@dataclass
class Conv2dParams:
    """Channels-last kernels:
        dense      weight (k, k, C_in, C_out)
        depthwise  weight (k, k, C, multiplier)  -> C * multiplier output channels,
                   the copies of input channel c are adjacent (c*m ... c*m + m-1)
        pointwise  weight (C_in, C_out)
    """
    weight: Tensor
    bias: Tensor | None = None
    stride: int = 1
    padding: int = 0
    mode: str = "dense"

    def __post_init__(self):
        if self.mode not in CONV_MODES:
            raise ValueError(f"unrecognized convolution mode: {self.mode}")
        if self.stride < 1 or self.padding < 0:
            raise ValueError(f"stride must be >= 1 and padding >= 0 (got {self.stride}, {self.padding})")
        if self.mode == "pointwise":
            if self.weight.ndim != 2 or self.stride != 1 or self.padding != 0:
                raise ValueError("pointwise convolution needs a (C_in, C_out) weight, stride 1 and padding 0")
        elif self.weight.ndim != 4 or self.weight.shape[0] != self.weight.shape[1]:
            raise ValueError(f"{self.mode} convolution needs a (k, k, ., .) weight, got {self.weight.shape}")

    @property
    def kernel_size(self) -> int:
        return 1 if self.mode == "pointwise" else self.weight.shape[0]

    @property
    def out_channels(self) -> int:
        if self.mode == "depthwise":
            return self.weight.shape[2] * self.weight.shape[3]
        return self.weight.shape[-1]


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ValueError(f"gamma {self.gamma.shape} and beta {self.beta.shape} must be matching vectors")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def output_extent(op: str, extent: int, k: int, stride: int, padding: int) -> int:
    span = extent + 2 * padding - k
    if span < 0 or span % stride:
        raise ShapeMismatchError(op, f"non-integer output extent: ({extent} + 2*{padding} - {k})/{stride} + 1")
    return span // stride + 1


def _pad_spatial(data: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return data
    widths = [(0, 0)] * (data.ndim - 3) + [(padding, padding), (padding, padding), (0, 0)]
    return np.pad(data, widths)


def _window(h_out: int, w_out: int, i: int, j: int, stride: int) -> tuple:
    return (Ellipsis,
            slice(i, i + stride * (h_out - 1) + 1, stride),
            slice(j, j + stride * (w_out - 1) + 1, stride),
            slice(None))


def _dense_conv(x: Tensor, weight: Tensor, stride: int, padding: int) -> Tensor:
    k, _, c_in, c_out = weight.shape
    if x.ndim < 3 or x.shape[-1] != c_in:
        raise ShapeMismatchError("dense_conv2d", f"input {x.shape} does not have {c_in} channels")
    height, width = x.shape[-3:-1]
    h_out = output_extent("dense_conv2d", height, k, stride, padding)
    w_out = output_extent("dense_conv2d", width, k, stride, padding)
    padded = _pad_spatial(x.data, padding)
    w = weight.data

    out = np.zeros(x.shape[:-3] + (h_out, w_out, c_out), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            out += padded[_window(h_out, w_out, i, j, stride)] @ w[i, j]

    def backward(g):
        grad_padded = np.zeros_like(padded, dtype=g.dtype)
        grad_w = np.zeros_like(w, dtype=g.dtype)
        g_flat = g.reshape(-1, c_out)
        for i in range(k):
            for j in range(k):
                window = _window(h_out, w_out, i, j, stride)
                grad_w[i, j] = padded[window].reshape(-1, c_in).T @ g_flat
                grad_padded[window] += g @ w[i, j].T
        return grad_padded[..., padding:padding + height, padding:padding + width, :], grad_w

    return record_op("dense_conv2d", (x, weight), out, backward)


def _depthwise_conv(x: Tensor, weight: Tensor, stride: int, padding: int) -> Tensor:
    k, _, channels, multiplier = weight.shape
    if x.ndim < 3 or x.shape[-1] != channels:
        raise ShapeMismatchError("depthwise_conv2d", f"input {x.shape} does not have {channels} channels")
    height, width = x.shape[-3:-1]
    h_out = output_extent("depthwise_conv2d", height, k, stride, padding)
    w_out = output_extent("depthwise_conv2d", width, k, stride, padding)
    padded = _pad_spatial(x.data, padding)
    w = weight.data

    out = np.zeros(x.shape[:-3] + (h_out, w_out, channels, multiplier), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            out += padded[_window(h_out, w_out, i, j, stride)][..., None] * w[i, j]

    def backward(g):
        g5 = g.reshape(g.shape[:-1] + (channels, multiplier))
        grad_padded = np.zeros_like(padded, dtype=g.dtype)
        grad_w = np.zeros_like(w, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                window = _window(h_out, w_out, i, j, stride)
                grad_w[i, j] = (padded[window][..., None] * g5).reshape(-1, channels, multiplier).sum(axis=0)
                grad_padded[window] += (g5 * w[i, j]).sum(axis=-1)
        return grad_padded[..., padding:padding + height, padding:padding + width, :], grad_w

    out = out.reshape(x.shape[:-3] + (h_out, w_out, channels * multiplier))
    return record_op("depthwise_conv2d", (x, weight), out, backward)


def _with_bias(y: Tensor, bias: Tensor | None) -> Tensor:
    return y if bias is None else add(y, bias)


def depthwise_conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    if p.mode != "depthwise":
        raise ValueError(f"depthwise_conv2d called with a {p.mode} kernel")
    return _with_bias(_depthwise_conv(x, p.weight, p.stride, p.padding), p.bias)


def pointwise_conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    if p.mode != "pointwise":
        raise ValueError(f"pointwise_conv2d called with a {p.mode} kernel")
    if x.shape[-1] != p.weight.shape[0]:
        raise ShapeMismatchError("pointwise_conv2d", f"input has {x.shape[-1]} channels, kernel expects {p.weight.shape[0]}")
    return linear(x, p.weight, p.bias)


def dense_conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    if p.mode != "dense":
        raise ValueError(f"dense_conv2d called with a {p.mode} kernel")
    return _with_bias(_dense_conv(x, p.weight, p.stride, p.padding), p.bias)


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    return {"depthwise": depthwise_conv2d, "pointwise": pointwise_conv2d, "dense": dense_conv2d}[p.mode](x, p)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatchError("linear", f"last extent {x.shape[-1]} does not match C_in = {weight.shape[0]}")
    return _with_bias(matmul(x, weight), bias)


def layer_norm(x: Tensor, p: LayerNormParams) -> Tensor:
    """Normalization over the channel (last) axis, separately at every position."""
    channels = x.shape[-1]
    if channels != p.gamma.size:
        raise ShapeMismatchError("layer_norm", f"input has {channels} channels, parameters {p.gamma.size}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + p.epsilon)
    x_hat = centered * inv_std
    gamma, beta = p.gamma.data, p.beta.data

    def backward(g):
        grad_x_hat = g * gamma
        grad_x = inv_std * (grad_x_hat
                            - grad_x_hat.mean(axis=-1, keepdims=True)
                            - x_hat * (grad_x_hat * x_hat).mean(axis=-1, keepdims=True))
        grad_gamma = (g * x_hat).reshape(-1, channels).sum(axis=0)
        grad_beta = g.reshape(-1, channels).sum(axis=0)
        return grad_x, grad_gamma, grad_beta

    out = (x_hat * gamma + beta).astype(x.dtype)
    return record_op("layer_norm", (x, p.gamma, p.beta), out, backward)


ACTIVATIONS = {"silu": silu, "relu": relu, "gelu": gelu, "sigmoid": sigmoid}


def activation(kind: str, x: Tensor) -> Tensor:
    if kind not in ACTIVATIONS:
        raise ValueError(f"unknown activation kind: '{kind}' (expected one of {', '.join(ACTIVATIONS)})")
    return ACTIVATIONS[kind](x)


########################################################################
# channel routing
def channel_partition(x: Tensor, sizes: list[int]) -> list[Tensor]:
    if any(size <= 0 for size in sizes) or sum(sizes) != x.shape[-1]:
        raise ShapeMismatchError("channel_partition", f"sizes {sizes} do not partition {x.shape[-1]} channels")
    parts, start = [], 0
    for size in sizes:
        parts.append(slice_axis(x, start, start + size, axis=-1))
        start += size
    return parts


def channel_concat(parts: list[Tensor]) -> Tensor:
    if len(parts) == 1:
        return parts[0]
    for part in parts[1:]:
        if part.shape[:-1] != parts[0].shape[:-1]:
            raise ShapeMismatchError("channel_concat", f"spatial mismatch: {parts[0].shape} vs {part.shape}")
    return concat(parts, axis=-1)


def shuffle_permutation(channels: int, groups: int) -> np.ndarray:
    """source[o] = input channel landing at output o; input a*n + b goes to output b*g + a."""
    if groups < 1 or channels % groups:
        raise ShapeMismatchError("channel_shuffle", f"{channels} channels are not divisible into {groups} groups")
    n = channels // groups
    return np.arange(channels).reshape(groups, n).T.reshape(-1)


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    return take(x, shuffle_permutation(x.shape[-1], groups), axis=-1)


def global_avg_pool(x: Tensor) -> Tensor:
    return reduce_mean(x, axis=(-3, -2))


def channel_conv1d(s: Tensor, weight: Tensor) -> Tensor:
    """Zero-padded 1-D cross-correlation along the channel (last) axis, odd kernel, no bias."""
    k = weight.size
    if k % 2 == 0:
        raise ValueError(f"channel convolution kernel must be odd, got {k}")
    pad = k // 2
    channels = s.shape[-1]
    widths = [(0, 0)] * (s.ndim - 1) + [(pad, pad)]
    padded = np.pad(s.data, widths)
    w = weight.data
    out = np.zeros_like(s.data)
    for j in range(k):
        out += w[j] * padded[..., j:j + channels]

    def backward(g):
        grad_padded = np.zeros_like(padded, dtype=g.dtype)
        grad_w = np.zeros_like(w, dtype=g.dtype)
        for j in range(k):
            grad_w[j] = (g * padded[..., j:j + channels]).sum()
            grad_padded[..., j:j + channels] += g * w[j]
        return grad_padded[..., pad:pad + channels], grad_w

    return record_op("channel_conv1d", (s, weight), out, backward)


########################################################################
def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], max-subtracted."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatchError("cross_entropy", f"logits {logits.shape} vs labels {labels.shape}")
    batch, n_classes = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DatasetError(f"cross_entropy: labels must lie in [0, {n_classes}), got {labels.min()}..{labels.max()}")
    rows = np.arange(batch)
    log_probs = _log_softmax(logits.data, axis=1)
    loss = -log_probs[rows, labels].mean()

    def backward(g):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (grad * (g / batch),)

    return record_op("cross_entropy", (logits,), np.asarray(loss, dtype=logits.dtype), backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    return _softmax(logits, axis=-1)
