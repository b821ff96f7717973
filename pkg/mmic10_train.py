#!/usr/bin/env python

"""
Train a MambaMIC classifier from a JSON run config.

Writes to the run output directory:
    resolved_config.json    the fully resolved config (itself a valid config)
    best.mmic               weights with the best validation OA, plus optimizer state
    history.txt/.csv        epoch, lr, train_loss, train_OA, val_OA, val_Pre, val_AUC
    test_metrics.txt        the best checkpoint evaluated on the test split
With -n above 1 every batch is split over that many local worker processes.
On Ctrl-C the current weights go to interrupted.mmic and the exit status is 1.
"""
import sys
from argparse import ArgumentParser

import numpy as np

from classes.mmic_command import MMICCommand, configure_logging, prepare_data
from models.backbone import build_model
from utils.checkpoint import make_checkpoint, save_checkpoint
from utils.config import parse_config
from utils.conventions import INTERRUPTED_CHECKPOINT, checkpoint_path, construct_run_filepath
from utils.trainer import evaluate_split, train_loop, write_history
from utils.utils import comfort, shrug


class TrainCommand(MMICCommand):

    name = "train"
    description = __doc__

    def add_arguments(self, parser: ArgumentParser):
        parser.add_argument("-c", "--config", dest="config", required=True, help="JSON run config.")
        self.add_cpu_argument(parser)

    def execute(self) -> int:
        cfg = parse_config(self.args.config, echo=True)
        index = prepare_data(cfg)
        dtype = cfg.model.np_dtype
        model = build_model(cfg.model, cfg.seed)
        counts = index.split_counts()
        print(f"{len(index)} records, per-class split sizes: "
              + ", ".join(f"{name} {counts[name].tolist()}" for name in counts))

        try:
            result = train_loop(model, index, cfg.schedule, dtype=dtype, n_workers=self.args.n_cpus)
        except KeyboardInterrupt:
            target = checkpoint_path(cfg.output_dir, INTERRUPTED_CHECKPOINT)
            save_checkpoint(make_checkpoint(cfg, model), target)
            shrug(f"interrupted; current weights saved to {target}")
            return 1

        write_history(result.history, cfg.output_dir)
        model.load_state_dict(result.best_state)
        best_metric = {"epoch": result.best_epoch}
        if result.best_metrics is not None:
            best_metric.update({f"val_{key}": value for key, value in result.best_metrics.as_row().items()})
        save_checkpoint(make_checkpoint(cfg, model, result.optim_state, best_metric), checkpoint_path(cfg.output_dir))

        if index.members("test").size:
            test = evaluate_split(model, index, "test", cfg.schedule.batch_size, dtype)
            construct_run_filepath(cfg.output_dir, "test_metrics", "txt").write_text(test.as_text() + "\n")
            print(test.as_text())
        else:
            shrug("the test split is empty, skipping the test evaluation")
        val_oa = best_metric.get("val_OA", np.nan)
        comfort(f"best val OA {val_oa:.2f} at epoch {result.best_epoch}; outputs in {cfg.output_dir}")
        return 0


def main():
    configure_logging()
    sys.exit(TrainCommand().run(sys.argv[1:], prog="mmic10_train.py"))


########################
if __name__ == "__main__":
    main()
