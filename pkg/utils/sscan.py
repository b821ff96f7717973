"""
Selective scan (input-dependent diagonal state space recurrence) and its
four-direction 2D wrapper.

    h_t = exp(Δ_t A) ⊙ h_{t-1} + (Δ_t B_t) x_t        h_0 = 0
    y_t = <C_t, h_t> + D_skip ⊙ x_t

x is (..., L, D_inner); A is (D_inner, N) and strictly negative; Δ_t (D_inner),
B_t and C_t (N) are projected from the token x_t itself.
"""
from enum import Enum

import numpy as np

from classes.module import Module, constant_init, uniform_init
from mmic00_settings import SCAN
from utils.errors import ShapeMismatchError
from utils.tensor import (Tensor, concat, exp, matmul, neg, no_grad, record_op, reshape, slice_axis, softplus,
                          take)


class ScanDirection(Enum):
    ROW_FORWARD = "row_forward"
    ROW_BACKWARD = "row_backward"
    COL_FORWARD = "col_forward"
    COL_BACKWARD = "col_backward"


# merge order is fixed
DIRECTIONS = (ScanDirection.ROW_FORWARD, ScanDirection.ROW_BACKWARD,
              ScanDirection.COL_FORWARD, ScanDirection.COL_BACKWARD)


class SSMParams(Module):
    """Selective-scan parameters for one D_inner-channel scan with N states per channel.
    A is stored as A_log, the realized A = -exp(A_log) is strictly negative.
    """

    def __init__(self, d_inner: int, n_state: int, rng: np.random.Generator, dtype=np.float64):
        self.d_inner = d_inner
        self.n_state = n_state
        self.A_log = Tensor(np.log(np.tile(np.arange(1, n_state + 1, dtype=np.float64), (d_inner, 1))).astype(dtype),
                            requires_grad=True)
        self.D_skip = constant_init((d_inner,), 1.0, dtype)
        self.proj_delta = uniform_init(rng, (d_inner, d_inner), d_inner, dtype)
        self.proj_B = uniform_init(rng, (d_inner, n_state), d_inner, dtype)
        self.proj_C = uniform_init(rng, (d_inner, n_state), d_inner, dtype)
        # softplus(delta_bias) log-uniform in [dt_min, dt_max]
        dt = np.exp(rng.uniform(np.log(SCAN["dt_min"]), np.log(SCAN["dt_max"]), size=d_inner))
        self.delta_bias = Tensor((dt + np.log(-np.expm1(-dt))).astype(dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return selective_scan_1d(x, self)

    def realized_A(self) -> Tensor:
        return neg(exp(self.A_log))

    def project(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Per-token (Δ, B, C)."""
        if x.shape[-1] != self.d_inner:
            raise ShapeMismatchError("selective_scan", f"tokens carry {x.shape[-1]} channels, expected {self.d_inner}")
        delta = softplus(matmul(x, self.proj_delta) + self.delta_bias)
        return delta, matmul(x, self.proj_B), matmul(x, self.proj_C)


def discretize(delta, A, B) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order hold for A, Euler for B:
    Ā = exp(Δ A)  and  B̄ = Δ B, both (..., L, D_inner, N).
    """
    delta = np.asarray(delta.data if isinstance(delta, Tensor) else delta)
    A = np.asarray(A.data if isinstance(A, Tensor) else A)
    B = np.asarray(B.data if isinstance(B, Tensor) else B)
    if np.any(delta <= 0):
        raise ValueError("discretize: the step size delta must be strictly positive")
    a_bar = np.exp(delta[..., None] * A)
    b_bar = delta[..., None] * B[..., None, :]
    return a_bar, b_bar


def _readout(states: np.ndarray, C: np.ndarray, D_skip: np.ndarray, x: np.ndarray) -> np.ndarray:
    return (states * C[..., None, :]).sum(axis=-1) + D_skip * x


def scan_core(x: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor, D_skip: Tensor) -> Tensor:
    """The exact sequential recurrence, recorded as a single op."""
    length = x.shape[-2]
    if length == 0:
        raise ShapeMismatchError("selective_scan_1d", "length-0 sequence")
    a_bar, b_bar = discretize(delta, A, B)
    inputs = b_bar * x.data[..., None]
    states = np.empty_like(inputs)
    h = np.zeros_like(inputs[..., 0, :, :])
    for t in range(length):
        h = a_bar[..., t, :, :] * h + inputs[..., t, :, :]
        states[..., t, :, :] = h
    y = _readout(states, C.data, D_skip.data, x.data)

    def backward(g):
        x_, dl, A_, B_, C_ = x.data, delta.data, A.data, B.data, C.data
        d_inner, n_state = A_.shape
        grad_x = g * D_skip.data
        grad_D = (g * x_).reshape(-1, d_inner).sum(axis=0)
        grad_C = (g[..., None] * states).sum(axis=-2)
        # gradient w.r.t. h_t, all t
        grad_h = np.empty_like(states)
        running = np.zeros_like(h)
        for t in reversed(range(length)):
            running = running + g[..., t, :, None] * C_[..., t, None, :]
            grad_h[..., t, :, :] = running
            running = running * a_bar[..., t, :, :]
        previous = np.concatenate([np.zeros_like(states[..., :1, :, :]), states[..., :-1, :, :]], axis=-3)
        grad_a_bar = grad_h * previous * a_bar
        grad_gb = (grad_h * B_[..., None, :]).sum(axis=-1)
        grad_delta = (grad_a_bar * A_).sum(axis=-1) + grad_gb * x_
        grad_x = grad_x + grad_gb * dl
        grad_A = (grad_a_bar * dl[..., None]).reshape(-1, d_inner, n_state).sum(axis=0)
        grad_B = (grad_h * (dl * x_)[..., None]).sum(axis=-2)
        return grad_x, grad_delta, grad_A, grad_B, grad_C, grad_D

    return record_op("selective_scan", (x, delta, A, B, C, D_skip), y.astype(x.dtype), backward)


def selective_scan_1d(x: Tensor, p: SSMParams) -> Tensor:
    if x.ndim < 2 or x.shape[-2] == 0:
        raise ShapeMismatchError("selective_scan_1d", f"expected a non-empty (..., L, D) sequence, got {x.shape}")
    delta, B, C = p.project(x)
    return scan_core(x, delta, p.realized_A(), B, C, p.D_skip)


def selective_scan_blocked(x: Tensor, p: SSMParams, block: int) -> Tensor:
    """Chunked evaluation: inside a block the states come from cumulative log-decays,
    (state, cumulative Ā) is carried from block to block. Forward only.
    """
    if block < 1:
        raise ValueError(f"block length must be >= 1, got {block}")
    with no_grad():
        delta, B, C = p.project(x)
        A = p.realized_A()
    length = x.shape[-2]
    if length == 0:
        raise ShapeMismatchError("selective_scan_blocked", "length-0 sequence")
    a_bar, b_bar = discretize(delta, A, B)
    inputs = b_bar * x.data[..., None]
    log_decay = delta.data[..., None] * A.data
    states = np.empty_like(inputs)
    h = np.zeros_like(inputs[..., 0, :, :])
    for start in range(0, length, block):
        segment = slice(start, min(start + block, length))
        cumulative = np.cumsum(log_decay[..., segment, :, :], axis=-3)
        span = cumulative.shape[-3]
        causal = np.tril(np.ones((span, span), dtype=bool))[:, :, None, None]
        # [t, s] -> prod_{s < tau <= t} Ā_tau
        gaps = cumulative[..., :, None, :, :] - cumulative[..., None, :, :, :]
        weights = np.exp(np.where(causal, gaps, -np.inf))
        intra = (weights * inputs[..., None, segment, :, :]).sum(axis=-3)
        block_states = np.exp(cumulative) * h[..., None, :, :] + intra
        states[..., segment, :, :] = block_states
        h = block_states[..., -1, :, :]
    y = _readout(states, C.data, p.D_skip.data, x.data)
    return Tensor(y.astype(x.dtype))


########################################################################
def direction_order(height: int, width: int, direction: ScanDirection) -> np.ndarray:
    """order[k] = row-major grid index of the k-th token of the sequence."""
    row_major = np.arange(height * width)
    col_major = row_major.reshape(height, width).T.reshape(-1)
    return {
        ScanDirection.ROW_FORWARD: row_major,
        ScanDirection.ROW_BACKWARD: row_major[::-1].copy(),
        ScanDirection.COL_FORWARD: col_major,
        ScanDirection.COL_BACKWARD: col_major[::-1].copy(),
    }[direction]


def scan2d_expand(x: Tensor, direction: ScanDirection) -> Tensor:
    height, width, channels = x.shape[-3:]
    tokens = reshape(x, x.shape[:-3] + (height * width, channels))
    return take(tokens, direction_order(height, width, direction), axis=-2)


def scan2d_merge(branches: list[Tensor], height: int, width: int) -> Tensor:
    if len(branches) != len(DIRECTIONS):
        raise ShapeMismatchError("scan2d_merge", f"expected {len(DIRECTIONS)} branches, got {len(branches)}")
    merged = None
    for branch, direction in zip(branches, DIRECTIONS):
        if branch.shape[-2] != height * width:
            raise ShapeMismatchError("scan2d_merge", f"branch length {branch.shape[-2]} != {height}*{width}")
        restored = take(branch, np.argsort(direction_order(height, width, direction)), axis=-2)
        merged = restored if merged is None else merged + restored
    return reshape(merged, merged.shape[:-2] + (height, width, merged.shape[-1]))


def ssm2d(x: Tensor, p: SSMParams) -> Tensor:
    """Four directional scans sharing p, evaluated as one stacked scan, merged by summation."""
    height, width = x.shape[-3:-1]
    sequences = [scan2d_expand(x, direction) for direction in DIRECTIONS]
    stacked = concat([reshape(seq, (1,) + seq.shape) for seq in sequences], axis=0)
    scanned = selective_scan_1d(stacked, p)
    branches = [reshape(slice_axis(scanned, idx, idx + 1, axis=0), sequences[idx].shape)
                for idx in range(len(DIRECTIONS))]
    return scan2d_merge(branches, height, width)
