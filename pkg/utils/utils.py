import os
from pathlib import Path

from colorama import Fore, Style


def comfort(msg):
    print(Fore.GREEN + "\t" + msg + Style.RESET_ALL)


def scream(msg):
    print(Fore.RED + "\t" + msg + Style.RESET_ALL)


def shrug(msg):
    print(Fore.YELLOW + "\t" + msg + Style.RESET_ALL)


def is_writable_dir(dirpath: str | Path):
    dirpath = Path(dirpath)
    # pathlib does not have a native way of checking if a dir is writable
    return dirpath.exists() and dirpath.is_dir() and os.access(dirpath, os.W_OK)


def parse_float_list(csv_string: str) -> list[float]:
    """'0.125,0.25' -> [0.125, 0.25]; empty fields are ignored."""
    return [float(field) for field in csv_string.split(",") if field.strip()]
