#!/usr/bin/env python

"""
Evaluate a checkpoint on one split of its dataset: OA, macro precision, macro AUC,
per-class precision and AUC, and the confusion matrix.
The dataset and the split come from the config embedded in the checkpoint
unless --data/--labels override them.
"""
import sys
from argparse import ArgumentParser
from pathlib import Path

from classes.mmic_command import MMICCommand, configure_logging, prepare_data
from utils.checkpoint import load_checkpoint, restore_model
from utils.dataset import ALL, SPLITS
from utils.trainer import evaluate_split
from utils.utils import comfort


class EvalCommand(MMICCommand):

    name = "eval"
    description = __doc__

    def add_arguments(self, parser: ArgumentParser):
        parser.add_argument("-k", "--checkpoint", dest="checkpoint", required=True, help="A .mmic checkpoint.")
        parser.add_argument("-s", "--split", dest="split", choices=SPLITS + (ALL,), default="test",
                            help="Split to evaluate. Default: test.")
        parser.add_argument("-d", "--data", dest="data", help="Override the dataset (.mmt or PPM directory).")
        parser.add_argument("-l", "--labels", dest="labels", help="Override the labels (.mmt or manifest).")
        parser.add_argument("-b", "--batch-size", dest="batch_size", type=int, help="Override the batch size.")

    def execute(self) -> int:
        cfg, model = restore_model(load_checkpoint(self.args.checkpoint))
        if self.args.data:
            cfg.data = Path(self.args.data).resolve()
        if self.args.labels:
            cfg.labels = Path(self.args.labels).resolve()
        index = prepare_data(cfg)
        batch_size = self.args.batch_size or cfg.schedule.batch_size
        report = evaluate_split(model, index, self.args.split, batch_size, cfg.model.np_dtype)
        print(report.as_text())
        comfort(f"{self.args.split}: OA {report.oa:.2f}  Pre {report.precision:.2f}  AUC {report.auc:.2f}")
        return 0


def main():
    configure_logging()
    sys.exit(EvalCommand().run(sys.argv[1:], prog="mmic11_eval.py"))


########################
if __name__ == "__main__":
    main()
