"""
Project-wide settings for the MambaMIC desk-scale library and command line tools.

Everything that a run can override lives in the JSON run config (see utils/config.py);
the dictionaries here only provide the documented defaults.
"""
import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent
WORK_DIR = Path(os.environ.get("MMIC_WORK_DIR", BASE_DIR / "runs"))

# debug mode: every recorded op checks its output for NaN/Inf,
# and every backbone block asserts that it preserves (H, W, C)
DEBUG = os.environ.get("MMIC_DEBUG", "") not in ("", "0", "false", "False")

# 1 = single worker, fully deterministic
N_THREADS_RAW = os.environ.get("MMIC_THREADS", "1")
N_THREADS = int(N_THREADS_RAW) if N_THREADS_RAW.isdigit() and int(N_THREADS_RAW) > 0 else 1

MODEL_DEFAULTS = {
    "variant": "tiny",
    "in_channels": 3,
    "input_size": 32,
    "lambda": 2,
    "r": 0.25,
    "ssm_state": 8,
    "eca_kernel": 3,
    "dw_kernel": 3,
    "dtype": "float32",
}

# the published totals are not accompanied by layouts - these are ours
VARIANTS = {
    "tiny":  {"stage_channels": [32, 64, 128, 256], "stage_depths": [2, 2, 4, 2]},
    "small": {"stage_channels": [40, 80, 160, 320], "stage_depths": [2, 2, 4, 2]},
    "base":  {"stage_channels": [48, 96, 192, 384], "stage_depths": [2, 2, 8, 2]},
}

TRAINING = {
    "learning_rate": 1e-4,
    "weight_decay": 1e-4,
    "betas": (0.9, 0.999),
    "adam_epsilon": 1e-8,
    "batch_size": 16,
    "epochs": 200,
    "warmup_epochs": 10,
    "min_lr_fraction": 0.01,  # min_lr = base_lr * min_lr_fraction
    "patience": 20,
}

DATA = {
    "split_ratio": (6, 2, 2),
    "seed": 42,
    "norm_mean": 0.5,
    "norm_std": 0.5,
}

SCAN = {
    "dt_min": 0.001,
    "dt_max": 0.1,
    # multiply-accumulates per (token, channel, state) step: Ā·h, B̄·x, C·h
    "macs_per_step": 3,
}

CHECKPOINT = {
    "magic": b"MMIC",
    "version": 1,
}
