#!/usr/bin/env python

"""
MambaMIC command line.

    mmic.py train      --config run.json
    mmic.py eval       --checkpoint runs/run/best.mmic --split test
    mmic.py predict    --checkpoint runs/run/best.mmic --image cell.ppm
    mmic.py params     --config run.json
    mmic.py bench-scan --lengths 64,256
    mmic.py ablate     --config run.json --r 0.125,0.25,0.5,1.0

Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
import sys

from classes.mmic_command import MMICCommand, configure_logging
from mmic10_train import TrainCommand
from mmic11_eval import EvalCommand
from mmic12_predict import PredictCommand
from mmic20_params import ParamsCommand
from mmic21_bench_scan import BenchScanCommand
from mmic30_ablate import AblateCommand
from utils.utils import scream

COMMANDS: dict[str, type[MMICCommand]] = {command.name: command for command in
                                          (TrainCommand, EvalCommand, PredictCommand, ParamsCommand,
                                           BenchScanCommand, AblateCommand)}


def usage() -> str:
    return __doc__.strip() + "\n\ncommands: " + ", ".join(COMMANDS)


def run_command(argv: list[str]) -> int:
    if not argv or argv[0] in ("-h", "--help"):
        print(usage())
        return 0 if argv else 2
    name, rest = argv[0], argv[1:]
    if name not in COMMANDS:
        scream(f"unknown command '{name}'")
        print(usage())
        return 2
    return COMMANDS[name]().run(rest, prog=f"mmic.py {name}")


def main():
    configure_logging()
    sys.exit(run_command(sys.argv[1:]))


########################
if __name__ == "__main__":
    main()
