#!/usr/bin/env python

"""
Ablation grids over one run config. Every row rebuilds the model with some flags
overridden, reports its parameter count and, unless --no-train is given, trains it
with the config's schedule and reports test OA / Pre / AUC of the best checkpoint.

    components   LAEF x FMIAM on/off                 (4 rows)
    parallel     four parallel REVSSMs vs a single one  (2 rows)
    ratio        partial channel ratio r sweep       (one row per --r value)

Independent rows run on -n worker processes. The resolved config is written before the
first row; on Ctrl-C the rows finished so far are written and the exit status is 1.
"""
import json
import sys
from argparse import ArgumentParser

import numpy as np
import pandas as pd

from classes.mmic_command import MMICCommand, configure_logging, iter_jobs, prepare_data
from models.backbone import build_model, count_params
from utils.config import config_from_dict, parse_config, write_resolved_config
from utils.conventions import construct_run_filepath
from utils.trainer import evaluate_split, train_loop
from utils.utils import comfort, parse_float_list, shrug

GRIDS = {
    "components": [{"use_laef": laef, "use_fmiam": fmiam} for laef, fmiam in
                   [(False, False), (True, False), (False, True), (True, True)]],
    "parallel": [{"parallel_vssm": False}, {"parallel_vssm": True}],
}
DEFAULT_RATIOS = [0.125, 0.25, 0.5, 1.0]


def ablation_row(overrides: dict, config_json: str, train: bool = True) -> dict:
    """One grid row; config_json is a resolved config, so every path in it is absolute."""
    raw = json.loads(config_json)
    raw.update(overrides)
    cfg = config_from_dict(raw, check_paths=train)
    row = dict(overrides)
    row["params"] = count_params(cfg.model).total_params
    if not train:
        return row
    index = prepare_data(cfg)
    dtype = cfg.model.np_dtype
    model = build_model(cfg.model, cfg.seed)
    result = train_loop(model, index, cfg.schedule, dtype=dtype)
    model.load_state_dict(result.best_state)
    split = "test" if index.members("test").size else "val"
    report = evaluate_split(model, index, split, cfg.schedule.batch_size, dtype)
    row.update({"split": split, "OA": report.oa, "Pre": report.precision, "AUC": report.auc,
                "best_epoch": result.best_epoch})
    return row


def write_table(results: list[dict], output_dir, grid: str) -> str:
    """ablation_<grid>.csv and .txt; returns the text rendering."""
    table = pd.DataFrame(results)
    text = table.to_string(index=False, float_format=lambda v: f"{v:.2f}" if np.isfinite(v) else "-")
    table.to_csv(construct_run_filepath(output_dir, f"ablation_{grid}", "csv"), index=False)
    construct_run_filepath(output_dir, f"ablation_{grid}", "txt").write_text(text + "\n")
    return text


class AblateCommand(MMICCommand):

    name = "ablate"
    description = __doc__

    def add_arguments(self, parser: ArgumentParser):
        parser.add_argument("-c", "--config", dest="config", required=True, help="JSON run config.")
        parser.add_argument("-g", "--grid", dest="grid", choices=list(GRIDS) + ["ratio"],
                            help="Grid to run. Default: ratio when --r is given, components otherwise.")
        parser.add_argument("-r", "--r", dest="ratios",
                            help="Comma separated partial channel ratios, e.g. 0.125,0.25,0.5,1.0.")
        parser.add_argument("-e", "--epochs", dest="epochs", type=int, help="Override the number of epochs.")
        parser.add_argument("--no-train", dest="no_train", action="store_true",
                            help="Only report parameter counts. Default: False")
        self.add_cpu_argument(parser)

    def grid_rows(self) -> tuple[str, list[dict]]:
        grid = self.args.grid or ("ratio" if self.args.ratios else "components")
        if grid != "ratio":
            return grid, GRIDS[grid]
        ratios = parse_float_list(self.args.ratios) if self.args.ratios else DEFAULT_RATIOS
        if not ratios:
            self.parser.error("--r needs at least one value")
        return grid, [{"r": r} for r in ratios]

    def execute(self) -> int:
        cfg = parse_config(self.args.config, check_paths=not self.args.no_train)
        if self.args.epochs is not None:
            raw = cfg.to_dict()
            raw["epochs"] = self.args.epochs
            raw["warmup_epochs"] = min(cfg.schedule.warmup_epochs, max(self.args.epochs - 1, 0))
            cfg = config_from_dict(raw, check_paths=not self.args.no_train)
        grid, rows = self.grid_rows()
        # fail early on a row the layout cannot accommodate (e.g. r too small for a group)
        for overrides in rows:
            ablation_row(overrides, cfg.to_json(), train=False)
        write_resolved_config(cfg)

        results = []
        try:
            for row in iter_jobs(ablation_row, rows, self.args.n_cpus, config_json=cfg.to_json(),
                                 train=not self.args.no_train):
                results.append(row)
        except KeyboardInterrupt:
            write_table(results, cfg.output_dir, grid)
            shrug(f"interrupted after {len(results)} of {len(rows)} rows; partial table written to {cfg.output_dir}")
            return 1
        print(write_table(results, cfg.output_dir, grid))
        comfort(f"{len(results)} rows written to {cfg.output_dir}")
        return 0


def main():
    configure_logging()
    sys.exit(AblateCommand().run(sys.argv[1:], prog="mmic30_ablate.py"))


########################
if __name__ == "__main__":
    main()
