"""
Four-stage MambaMIC classifier with analytic parameter and MAC accounting.

    image S x S x ch
      -> stem (4x4 conv, stride 4, LN)                  S/4,  C1
      -> stage 1 blocks
      -> merge (2x2 conv, stride 2, C -> 2C, LN)        S/8,  C2  ... stage 4 at S/32, C4
      -> global average pool -> linear head -> logits
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from classes.module import Module
from mmic00_settings import MODEL_DEFAULTS, SCAN, VARIANTS
from models.layers import Conv2d, LayerNorm, Linear
from models.mambamic_blocks import DW_KERNEL, N_GROUPS, LAEFConfig, MambaMICBlock
from utils.errors import ConfigError, ShapeMismatchError
from utils.nn_ops import global_avg_pool
from utils.tensor import Tensor, debug_enabled

DTYPES = {"float32": np.float32, "float64": np.float64}
STEM_STRIDE = 4
MERGE_STRIDE = 2


@dataclass
class ModelConfig:
    variant: str = MODEL_DEFAULTS["variant"]
    num_classes: int = 2
    in_channels: int = MODEL_DEFAULTS["in_channels"]
    input_size: int = MODEL_DEFAULTS["input_size"]
    stage_channels: list[int] = field(default_factory=lambda: list(VARIANTS["tiny"]["stage_channels"]))
    stage_depths: list[int] = field(default_factory=lambda: list(VARIANTS["tiny"]["stage_depths"]))
    lam: int = MODEL_DEFAULTS["lambda"]
    r: float = MODEL_DEFAULTS["r"]
    ssm_state: int = MODEL_DEFAULTS["ssm_state"]
    eca_kernel: int = MODEL_DEFAULTS["eca_kernel"]
    dtype: str = MODEL_DEFAULTS["dtype"]
    use_laef: bool = True
    use_fmiam: bool = True
    parallel_vssm: bool = True

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_variant(cls, variant: str, **overrides) -> "ModelConfig":
        if variant not in VARIANTS:
            raise ConfigError("variant", f"unknown variant '{variant}' (expected one of {', '.join(VARIANTS)})")
        layout = {key: list(value) for key, value in VARIANTS[variant].items()}
        layout.update(overrides)
        return cls(variant=variant, **layout)

    def validate(self):
        if len(self.stage_channels) != 4 or len(self.stage_depths) != 4:
            raise ConfigError("stage_channels", "exactly four stages are expected")
        for i, width in enumerate(self.stage_channels):
            if width <= 0 or width % 8:
                raise ConfigError("stage_channels", f"stage {i + 1} width {width} is not a positive multiple of 8")
        for i in range(3):
            if self.stage_channels[i + 1] != 2 * self.stage_channels[i]:
                raise ConfigError("stage_channels", f"stage {i + 2} width must double stage {i + 1} width")
        if any(depth < 1 for depth in self.stage_depths):
            raise ConfigError("stage_depths", f"every stage needs at least one block, got {self.stage_depths}")
        if self.input_size <= 0 or self.input_size % (STEM_STRIDE * MERGE_STRIDE ** 3):
            raise ConfigError("input_size", f"{self.input_size} is not a positive multiple of 32")
        if self.in_channels not in (1, 3):
            raise ConfigError("in_channels", f"expected 1 (grayscale) or 3 (RGB), got {self.in_channels}")
        if self.num_classes < 2:
            raise ConfigError("classes", f"need at least two classes, got {self.num_classes}")
        if int(self.lam) != self.lam or self.lam < 1:
            raise ConfigError("lambda", f"the expansion factor must be a positive integer, got {self.lam}")
        if self.ssm_state < 1:
            raise ConfigError("ssm_state", f"must be positive, got {self.ssm_state}")
        if self.eca_kernel < 1 or self.eca_kernel % 2 == 0:
            raise ConfigError("eca_kernel", f"must be a positive odd integer, got {self.eca_kernel}")
        if self.dtype not in DTYPES:
            raise ConfigError("dtype", f"expected one of {', '.join(DTYPES)}, got {self.dtype}")
        if not 0 < self.r <= 1:
            raise ConfigError("r", f"partial channel ratio must lie in (0, 1], got {self.r}")
        if self.use_laef:
            # every REVSSM width must leave room for a local LAEF group
            for width in self.stage_channels:
                group = width // 2 // (N_GROUPS if self.parallel_vssm else 1)
                LAEFConfig(int(self.lam) * group, group, self.r)

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    def stage_resolutions(self) -> list[int]:
        side = self.input_size // STEM_STRIDE
        return [side // MERGE_STRIDE ** i for i in range(4)]

    def to_dict(self) -> dict:
        return asdict(self)


########################################################################
class Embedding(Module):
    """Non-overlapping patch embedding: k x k conv with stride k, then LN."""

    def __init__(self, c_in: int, c_out: int, patch: int, rng: np.random.Generator, dtype=np.float64):
        self.conv = Conv2d(c_in, c_out, rng, kernel=patch, stride=patch, mode="dense", dtype=dtype)
        self.norm = LayerNorm(c_out, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(self.conv(x))


def stem_embed(x: Tensor, stem: Embedding) -> Tensor:
    return stem(x)


def patch_merge(x: Tensor, merge: Embedding) -> Tensor:
    if x.shape[-3] % 2 or x.shape[-2] % 2:
        raise ShapeMismatchError("patch_merge", f"spatial extents {x.shape[-3:-1]} are not even")
    return merge(x)


class Stage(Module):

    def __init__(self, cfg: ModelConfig, index: int, rng: np.random.Generator):
        dtype = cfg.np_dtype
        width = cfg.stage_channels[index]
        self.merge = None
        if index > 0:
            self.merge = Embedding(cfg.stage_channels[index - 1], width, MERGE_STRIDE, rng, dtype=dtype)
        self.blocks = [MambaMICBlock(width, rng, lam=int(cfg.lam), r=cfg.r, ssm_state=cfg.ssm_state,
                                     eca_kernel=cfg.eca_kernel, use_laef=cfg.use_laef, use_fmiam=cfg.use_fmiam,
                                     parallel_vssm=cfg.parallel_vssm, dtype=dtype)
                       for _ in range(cfg.stage_depths[index])]

    def forward(self, x: Tensor) -> Tensor:
        if self.merge is not None:
            x = patch_merge(x, self.merge)
        for block in self.blocks:
            y = block(x)
            if debug_enabled() and y.shape != x.shape:
                raise ShapeMismatchError("mambamic_block", f"block changed the feature shape {x.shape} -> {y.shape}")
            x = y
        return x


class Backbone(Module):

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        dtype = cfg.np_dtype
        self.stem = Embedding(cfg.in_channels, cfg.stage_channels[0], STEM_STRIDE, rng, dtype=dtype)
        self.stages = [Stage(cfg, index, rng) for index in range(4)]
        self.head = Linear(cfg.stage_channels[-1], cfg.num_classes, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        """(S, S, ch) -> (K,) or (B, S, S, ch) -> (B, K)."""
        expected = (self.cfg.input_size, self.cfg.input_size, self.cfg.in_channels)
        if x.ndim not in (3, 4) or x.shape[-3:] != expected:
            raise ShapeMismatchError("backbone_forward", f"input {x.shape} does not match {expected}")
        features = stem_embed(x, self.stem)
        for stage in self.stages:
            features = stage(features)
        return self.head(global_avg_pool(features))


def build_model(cfg: ModelConfig, seed: int = 0) -> Backbone:
    return Backbone(cfg, np.random.default_rng(seed))


def backbone_forward(x: Tensor, model: Backbone) -> Tensor:
    return model(x)


########################################################################
# accounting
@dataclass
class ParamReport:
    params: dict[str, int] = field(default_factory=dict)
    macs: dict[str, int] = field(default_factory=dict)
    input_size: int | None = None
    enumerated: int | None = None

    @property
    def total_params(self) -> int:
        return sum(self.params.values())

    @property
    def total_macs(self) -> int:
        return sum(self.macs.values())

    @property
    def gmacs(self) -> float:
        return self.total_macs / 1e9

    def as_text(self) -> str:
        names = list(dict.fromkeys(list(self.params) + list(self.macs)))
        width = max([len(name) for name in names] + [len("total")])
        lines = [f"{'module':<{width}}  {'params':>12}  {'MACs':>14}"]
        for name in names:
            lines.append(f"{name:<{width}}  {self.params.get(name, 0):>12,d}  {self.macs.get(name, 0):>14,d}")
        lines.append(f"{'total':<{width}}  {self.total_params:>12,d}  {self.total_macs:>14,d}")
        if self.enumerated is not None:
            lines.append(f"enumerated parameters: {self.enumerated:,d}")
        return "\n".join(lines)

    def as_key_values(self) -> str:
        lines = [f"params.{name}={count}" for name, count in self.params.items()]
        lines += [f"macs.{name}={count}" for name, count in self.macs.items()]
        lines.append(f"params.total={self.total_params}")
        if self.macs:
            lines.append(f"macs.total={self.total_macs}")
            lines.append(f"input_size={self.input_size}")
        if self.enumerated is not None:
            lines.append(f"params.enumerated={self.enumerated}")
        return "\n".join(lines) + "\n"


def linear_params(c_in: int, c_out: int, bias: bool = True) -> int:
    return c_in * c_out + (c_out if bias else 0)


def depthwise_params(channels: int, kernel: int, multiplier: int = 1, bias: bool = True) -> int:
    c_out = channels * multiplier
    return kernel * kernel * c_out + (c_out if bias else 0)


def dense_params(c_in: int, c_out: int, kernel: int, bias: bool = True) -> int:
    return kernel * kernel * c_in * c_out + (c_out if bias else 0)


def ssm_params(d_inner: int, n_state: int) -> int:
    # A_log, D_skip, proj_delta, delta_bias, proj_B, proj_C
    return d_inner * n_state + d_inner + d_inner * d_inner + d_inner + 2 * d_inner * n_state


def _revssm_params(cfg: ModelConfig, c: int) -> int:
    lam, k = int(cfg.lam), DW_KERNEL
    inner = lam * c
    count = linear_params(c, inner) + depthwise_params(inner, k) + ssm_params(inner, cfg.ssm_state)
    count += 2 * inner + 2 * c + depthwise_params(c, k, multiplier=lam)
    if cfg.use_laef:
        n_local = LAEFConfig(inner, c, cfg.r).n_local
        count += linear_params(inner, c) + linear_params(n_local, n_local)
    else:
        count += linear_params(inner, c)
    return count


def _block_params(cfg: ModelConfig, channels: int) -> int:
    half = channels // 2
    count = depthwise_params(half, DW_KERNEL) + linear_params(half, half)
    if cfg.parallel_vssm:
        count += N_GROUPS * _revssm_params(cfg, half // N_GROUPS)
    else:
        count += _revssm_params(cfg, half)
    if cfg.use_fmiam:
        count += 2 * linear_params(half, half) + cfg.eca_kernel
    return count


def count_params(cfg: ModelConfig, model: Backbone | None = None) -> ParamReport:
    """Analytic per-module parameter counts; with a model, also the count by enumeration."""
    widths = cfg.stage_channels
    report = ParamReport()
    report.params["stem"] = dense_params(cfg.in_channels, widths[0], STEM_STRIDE) + 2 * widths[0]
    for i, (width, depth) in enumerate(zip(widths, cfg.stage_depths)):
        if i > 0:
            report.params[f"stages.{i}.merge"] = dense_params(widths[i - 1], width, MERGE_STRIDE) + 2 * width
        for j in range(depth):
            report.params[f"stages.{i}.blocks.{j}"] = _block_params(cfg, width)
    report.params["head"] = linear_params(widths[-1], cfg.num_classes)
    if model is not None:
        report.enumerated = model.n_parameters()
    return report


def _revssm_macs(cfg: ModelConfig, c: int, positions: int) -> int:
    lam, k, n = int(cfg.lam), DW_KERNEL, cfg.ssm_state
    inner = lam * c
    macs = positions * c * inner + positions * k * k * inner
    # four directions, each projecting every token to (delta, B, C) and running the recurrence
    macs += 4 * positions * (inner * inner + 2 * inner * n)
    macs += 4 * positions * n * inner * SCAN["macs_per_step"]
    macs += positions * k * k * inner
    macs += positions * inner * c
    if cfg.use_laef:
        n_local = LAEFConfig(inner, c, cfg.r).n_local
        macs += positions * n_local * n_local
    return macs


def _block_macs(cfg: ModelConfig, channels: int, side: int) -> int:
    positions = side * side
    half = channels // 2
    macs = positions * DW_KERNEL ** 2 * half + positions * half * half
    if cfg.parallel_vssm:
        macs += N_GROUPS * _revssm_macs(cfg, half // N_GROUPS, positions)
    else:
        macs += _revssm_macs(cfg, half, positions)
    if cfg.use_fmiam:
        macs += 2 * positions * half * half + cfg.eca_kernel * channels
    return macs


def count_macs(cfg: ModelConfig, input_size: int | None = None) -> ParamReport:
    """Multiply-accumulates of one forward pass on a single image.
    Normalization, activations, gating products and pooling are not counted;
    the recurrence costs SCAN['macs_per_step'] MACs per (token, channel, state).
    """
    size = cfg.input_size if input_size is None else input_size
    if size % (STEM_STRIDE * MERGE_STRIDE ** 3):
        raise ConfigError("input_size", f"{size} is not a multiple of 32")
    widths = cfg.stage_channels
    report = ParamReport(input_size=size)
    side = size // STEM_STRIDE
    report.macs["stem"] = side * side * STEM_STRIDE ** 2 * cfg.in_channels * widths[0]
    for i, (width, depth) in enumerate(zip(widths, cfg.stage_depths)):
        if i > 0:
            side //= MERGE_STRIDE
            report.macs[f"stages.{i}.merge"] = side * side * MERGE_STRIDE ** 2 * widths[i - 1] * width
        for j in range(depth):
            report.macs[f"stages.{i}.blocks.{j}"] = _block_macs(cfg, width, side)
    report.macs["head"] = widths[-1] * cfg.num_classes
    return report


def param_report(cfg: ModelConfig, model: Backbone | None = None, input_size: int | None = None) -> ParamReport:
    report = count_params(cfg, model)
    report.macs = count_macs(cfg, input_size).macs
    report.input_size = input_size or cfg.input_size
    return report
