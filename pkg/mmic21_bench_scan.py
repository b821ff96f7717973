#!/usr/bin/env python

"""
Time the sequential and the blocked selective scan on random 64-bit inputs.
Columns: L, N, D_inner, variant, ns/token, and the max abs. difference from the sequential scan.
"""
import sys
import time
from argparse import ArgumentParser

import numpy as np
import pandas as pd

from classes.mmic_command import MMICCommand, configure_logging
from utils.sscan import SSMParams, selective_scan_1d, selective_scan_blocked
from utils.tensor import Tensor, no_grad
from utils.utils import comfort


def parse_int_list(csv_string: str) -> list[int]:
    return [int(field) for field in csv_string.split(",") if field.strip()]


def time_per_token(fn, length: int, repeats: int) -> tuple[float, np.ndarray]:
    best, out = np.inf, None
    for _ in range(repeats):
        start = time.perf_counter_ns()
        out = fn()
        best = min(best, time.perf_counter_ns() - start)
    return best / length, out.data


def bench_scan(lengths: list[int], blocks: list[int], n_state: int, d_inner: int, repeats: int = 3,
               seed: int = 0) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    params = SSMParams(d_inner, n_state, rng)
    rows = []
    with no_grad():
        for length in lengths:
            x = Tensor(rng.standard_normal((length, d_inner)))
            ns, reference = time_per_token(lambda: selective_scan_1d(x, params), length, repeats)
            rows.append({"L": length, "N": n_state, "D_inner": d_inner, "variant": "sequential",
                         "ns/token": ns, "max_abs_error": 0.0})
            for block in blocks:
                ns, out = time_per_token(lambda: selective_scan_blocked(x, params, block), length, repeats)
                rows.append({"L": length, "N": n_state, "D_inner": d_inner, "variant": f"blocked/{block}",
                             "ns/token": ns, "max_abs_error": float(np.abs(out - reference).max())})
    return pd.DataFrame(rows)


class BenchScanCommand(MMICCommand):

    name = "bench-scan"
    description = __doc__

    def add_arguments(self, parser: ArgumentParser):
        parser.add_argument("-L", "--lengths", dest="lengths", default="64,256,1024",
                            help="Comma separated sequence lengths. Default: 64,256,1024.")
        parser.add_argument("-b", "--blocks", dest="blocks", default="8,64",
                            help="Comma separated block lengths. Default: 8,64.")
        parser.add_argument("-N", "--state", dest="n_state", type=int, default=8, help="Default: 8.")
        parser.add_argument("-D", "--d-inner", dest="d_inner", type=int, default=16, help="Default: 16.")
        parser.add_argument("-r", "--repeats", dest="repeats", type=int, default=3,
                            help="Best of this many runs. Default: 3.")
        parser.add_argument("--seed", dest="seed", type=int, default=0)

    def execute(self) -> int:
        lengths, blocks = parse_int_list(self.args.lengths), parse_int_list(self.args.blocks)
        if not lengths or min(lengths) < 1 or (blocks and min(blocks) < 1):
            self.parser.error("lengths and blocks must be positive integers")
        table = bench_scan(lengths, blocks, self.args.n_state, self.args.d_inner, self.args.repeats, self.args.seed)
        print(table.to_string(index=False, float_format=lambda v: f"{v:.3g}"))
        comfort(f"worst blocked deviation {table['max_abs_error'].max():.3e}")
        return 0


def main():
    configure_logging()
    sys.exit(BenchScanCommand().run(sys.argv[1:], prog="mmic21_bench_scan.py"))


########################
if __name__ == "__main__":
    main()
