"""
The MambaMIC block and its parts.

    f -> chunk -> (f1, f2)
         f1 -> DW -> PW                                        = F_L   (C/2)
         f2 -> split in 4 -> REVSSM each -> concat -> shuffle  = F_G   (C/2)
    FMIAM(F_L, F_G)                                            -> C

REVSSM(x) = x + LAEF(LN(ssm2d(SiLU(DW(Linear(x))))) * SiLU(DW_expand(LN(x))))
"""
import math
from dataclasses import dataclass

import numpy as np

from classes.module import Module, uniform_init
from mmic00_settings import MODEL_DEFAULTS
from models.layers import Conv2d, LayerNorm, Linear
from utils.errors import ConfigError, ShapeMismatchError
from utils.nn_ops import (activation, channel_concat, channel_conv1d, channel_partition, channel_shuffle,
                          global_avg_pool)
from utils.sscan import SSMParams, ssm2d
from utils.tensor import Tensor, reshape, sigmoid, silu

N_GROUPS = 4
DW_KERNEL = MODEL_DEFAULTS["dw_kernel"]


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def depthwise(c_in: int, c_out: int, rng: np.random.Generator, dtype) -> Conv2d:
    return Conv2d(c_in, c_out, rng, kernel=DW_KERNEL, padding=DW_KERNEL // 2, mode="depthwise", dtype=dtype)


def shuffle_groups(channels: int) -> int:
    # odd widths (e.g. 5 channels per group in the small variant) cannot be split in two
    return 2 if channels % 2 == 0 else 1


########################################################################
@dataclass
class LAEFConfig:
    in_channels: int
    out_channels: int
    r: float = 0.25

    def __post_init__(self):
        if not 0 < self.r <= 1:
            raise ConfigError("r", f"partial channel ratio must lie in (0, 1], got {self.r}")
        n_local = self.n_local
        if self.r != 1 and not 1 <= n_local < self.out_channels:
            raise ConfigError("r", f"r={self.r} on {self.out_channels} channels leaves a local group of {n_local}")

    @property
    def n_local(self) -> int:
        return self.out_channels if self.r == 1 else round_half_up(self.r * self.out_channels)


@dataclass
class REVSSMConfig:
    channels: int
    lam: int = 2
    ssm_state: int = 8
    r: float = 0.25
    use_laef: bool = True

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError("stage_channels", f"a REVSSM group needs at least one channel, got {self.channels}")
        if int(self.lam) != self.lam or self.lam < 1:
            raise ConfigError("lambda", f"the expansion factor must be a positive integer, got {self.lam}")
        if self.ssm_state < 1:
            raise ConfigError("ssm_state", f"must be positive, got {self.ssm_state}")

    @property
    def inner_channels(self) -> int:
        return int(self.lam) * self.channels


@dataclass
class FMIAMConfig:
    branch_channels: int
    eca_kernel: int = 3
    local_activation: str = "relu"
    global_activation: str = "gelu"

    def __post_init__(self):
        if self.eca_kernel < 1 or self.eca_kernel % 2 == 0:
            raise ConfigError("eca_kernel", f"must be a positive odd integer, got {self.eca_kernel}")


########################################################################
class LAEF(Module):
    """Embed to the lower width, enhance the first round(r*C) channels, shuffle them back in."""

    def __init__(self, cfg: LAEFConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.embed = Conv2d(cfg.in_channels, cfg.out_channels, rng, mode="pointwise", dtype=dtype)
        self.local = Conv2d(cfg.n_local, cfg.n_local, rng, mode="pointwise", dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        embedded = silu(self.embed(x))
        n_local, c_out = self.cfg.n_local, self.cfg.out_channels
        if n_local == c_out:
            parts = [silu(self.local(embedded))]
        else:
            local, retained = channel_partition(embedded, [n_local, c_out - n_local])
            parts = [silu(self.local(local)), retained]
        return channel_shuffle(channel_concat(parts), shuffle_groups(c_out))


class LinearFilter(Module):
    """Width-matching linear map, stands in for LAEF when it is ablated."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float64):
        self.proj = Linear(c_in, c_out, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.proj(x)


class REVSSM(Module):

    def __init__(self, cfg: REVSSMConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        c, inner = cfg.channels, cfg.inner_channels
        self.in_proj = Linear(c, inner, rng, dtype=dtype)
        self.scan_dw = depthwise(inner, inner, rng, dtype)
        self.ssm = SSMParams(inner, cfg.ssm_state, rng, dtype=dtype)
        self.scan_norm = LayerNorm(inner, dtype=dtype)
        self.gate_norm = LayerNorm(c, dtype=dtype)
        # depthwise with channel multiplier lambda: C -> lambda*C
        self.gate_dw = depthwise(c, inner, rng, dtype)
        if cfg.use_laef:
            self.filter = LAEF(LAEFConfig(inner, c, cfg.r), rng, dtype=dtype)
        else:
            self.filter = LinearFilter(inner, c, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.cfg.channels:
            raise ShapeMismatchError("revssm", f"input has {x.shape[-1]} channels, block expects {self.cfg.channels}")
        x1 = self.scan_norm(ssm2d(silu(self.scan_dw(self.in_proj(x))), self.ssm))
        x2 = silu(self.gate_dw(self.gate_norm(x)))
        if x1.shape != x2.shape:
            raise ShapeMismatchError("revssm", f"branch shapes differ: {x1.shape} vs {x2.shape}")
        return x + self.filter(x1 * x2)


class ECA(Module):
    """Channel attention from pooled statistics: x * sigmoid(conv1d_k(GAP(x)))."""

    def __init__(self, kernel: int, rng: np.random.Generator, dtype=np.float64):
        self.weight = uniform_init(rng, (kernel,), kernel, dtype)

    def forward(self, x: Tensor) -> Tensor:
        gate = sigmoid(channel_conv1d(global_avg_pool(x), self.weight))
        return x * reshape(gate, gate.shape[:-1] + (1, 1, gate.shape[-1]))


class FMIAM(Module):

    def __init__(self, cfg: FMIAMConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        c = cfg.branch_channels
        self.local_gate = Conv2d(c, c, rng, mode="pointwise", dtype=dtype)
        self.global_gate = Conv2d(c, c, rng, mode="pointwise", dtype=dtype)
        self.eca = ECA(cfg.eca_kernel, rng, dtype=dtype)

    def forward(self, f_local: Tensor, f_global: Tensor) -> Tensor:
        if f_local.shape != f_global.shape:
            raise ShapeMismatchError("fmiam", f"branch shapes differ: {f_local.shape} vs {f_global.shape}")
        w_local = sigmoid(activation(self.cfg.local_activation, self.local_gate(f_local)))
        w_global = sigmoid(activation(self.cfg.global_activation, self.global_gate(f_global)))
        # each branch is gated by the other one
        return self.eca(channel_concat([w_global * f_local, w_local * f_global]))


class ConcatFusion(Module):
    """Plain concatenation, stands in for FMIAM when it is ablated."""

    def forward(self, f_local: Tensor, f_global: Tensor) -> Tensor:
        return channel_concat([f_local, f_global])


########################################################################
class MambaMICBlock(Module):

    def __init__(self, channels: int, rng: np.random.Generator, lam: int = 2, r: float = 0.25, ssm_state: int = 8,
                 eca_kernel: int = 3, use_laef: bool = True, use_fmiam: bool = True, parallel_vssm: bool = True,
                 dtype=np.float64):
        if channels % 8:
            raise ConfigError("stage_channels", f"block width {channels} is not divisible by 8")
        half = channels // 2
        self.channels = channels
        self.parallel_vssm = parallel_vssm
        self.local_dw = depthwise(half, half, rng, dtype)
        self.local_pw = Conv2d(half, half, rng, mode="pointwise", dtype=dtype)
        if parallel_vssm:
            group_cfg = REVSSMConfig(half // N_GROUPS, lam, ssm_state, r, use_laef)
            self.groups = [REVSSM(group_cfg, rng, dtype=dtype) for _ in range(N_GROUPS)]
        else:
            self.groups = [REVSSM(REVSSMConfig(half, lam, ssm_state, r, use_laef), rng, dtype=dtype)]
        if use_fmiam:
            self.fusion = FMIAM(FMIAMConfig(half, eca_kernel), rng, dtype=dtype)
        else:
            self.fusion = ConcatFusion()

    def branch_widths(self) -> tuple[int, int]:
        return self.channels // 2, self.channels // 2

    def forward(self, f: Tensor) -> Tensor:
        if f.shape[-1] != self.channels:
            raise ShapeMismatchError("mambamic_block", f"input has {f.shape[-1]} channels, block expects {self.channels}")
        half = self.channels // 2
        f_local_in, f_global_in = channel_partition(f, [half, half])
        f_local = self.local_pw(self.local_dw(f_local_in))
        if self.parallel_vssm:
            chunks = channel_partition(f_global_in, [half // N_GROUPS] * N_GROUPS)
            f_global = channel_shuffle(channel_concat([group(chunk) for group, chunk in zip(self.groups, chunks)]),
                                       N_GROUPS)
        else:
            f_global = self.groups[0](f_global_in)
        return self.fusion(f_local, f_global)
