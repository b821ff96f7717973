#!/usr/bin/env python

"""
Settings sanity (existence, accessibility, consistency) checks.
"""
import os

from mmic00_settings import N_THREADS_RAW, VARIANTS, WORK_DIR
from models.backbone import ModelConfig
from utils.errors import ConfigError
from utils.utils import comfort, is_writable_dir, scream


def workdir_check() -> bool:
    if not WORK_DIR.exists():
        scream(f"Work dir {WORK_DIR} not found (set MMIC_WORK_DIR or create it).")
        return False
    if not WORK_DIR.is_dir():
        scream(f"Work dir {WORK_DIR} does not seem to be a directory.")
        return False
    if not is_writable_dir(WORK_DIR):
        scream(f"Work dir {WORK_DIR} is not writeable by the current user.")
        return False
    comfort(f"Work dir {WORK_DIR} OK.")
    return True


def threads_check() -> bool:
    if not N_THREADS_RAW.isdigit() or int(N_THREADS_RAW) < 1:
        scream(f"MMIC_THREADS={N_THREADS_RAW!r} is not a positive integer (falling back to 1).")
        return False
    comfort(f"MMIC_THREADS = {N_THREADS_RAW}{' (deterministic single worker)' if N_THREADS_RAW == '1' else ''}.")
    return True


def variants_check() -> bool:
    ok = True
    for variant in VARIANTS:
        try:
            ModelConfig.from_variant(variant)
        except ConfigError as error:
            scream(f"variant '{variant}': {error}")
            ok = False
    if ok:
        comfort(f"Variant table ({', '.join(VARIANTS)}) consistent.")
    return ok


def main():
    """Sanity checking for the project settings"""

    print("Settings sanity check:")
    if os.environ.get("MMIC_DEBUG"):
        print("Debug mode is on: every op checks its output for NaN/Inf.")
    failed = 0
    for test in [workdir_check, threads_check, variants_check]:
        if not test():
            failed += 1

    if not failed:
        print(f"All sanity checks OK.")
    else:
        print(f"{failed} test{'s' if failed > 1 else ''} failed.")


###########################
if __name__ == "__main__":
    main()
