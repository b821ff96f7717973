#!/usr/bin/env python

"""
Parameter and multiply-accumulate accounting for a model layout.
The analytic per-module counts are printed as an aligned table, checked against
an exhaustive enumeration of the built model's parameters, and written as a
key=value file.
"""
import sys
from argparse import ArgumentParser
from pathlib import Path

from classes.mmic_command import MMICCommand, configure_logging
from mmic00_settings import VARIANTS, WORK_DIR
from models.backbone import ModelConfig, build_model, param_report
from utils.config import parse_config
from utils.conventions import construct_run_filepath
from utils.utils import comfort, scream


class ParamsCommand(MMICCommand):

    name = "params"
    description = __doc__

    def add_arguments(self, parser: ArgumentParser):
        parser.add_argument("-c", "--config", dest="config", help="JSON run config; its model section is used.")
        parser.add_argument("-v", "--variant", dest="variant", choices=list(VARIANTS), default="tiny",
                            help="Variant to account for when no config is given. Default: tiny.")
        parser.add_argument("-k", "--classes", dest="classes", type=int, default=2, help="Default: 2.")
        parser.add_argument("-s", "--input-size", dest="input_size", type=int,
                            help="Input side for the MAC count. Default: the model's input_size.")
        parser.add_argument("-o", "--kv-out", dest="kv_out", help="Key=value output file.")

    def execute(self) -> int:
        if self.args.config:
            run_cfg = parse_config(self.args.config, check_paths=False)
            model_cfg, output_dir = run_cfg.model, run_cfg.output_dir
        else:
            model_cfg = ModelConfig.from_variant(self.args.variant, num_classes=self.args.classes)
            output_dir = WORK_DIR
        report = param_report(model_cfg, build_model(model_cfg), self.args.input_size)
        print(report.as_text())
        print(f"GMACs: {report.gmacs:.4f} at {report.input_size}x{report.input_size}")

        kv_path = Path(self.args.kv_out) if self.args.kv_out else \
            construct_run_filepath(output_dir, f"params_{model_cfg.variant}", "kv")
        kv_path.write_text(report.as_key_values())
        if report.enumerated != report.total_params:
            scream(f"analytic count {report.total_params} != enumerated {report.enumerated}")
            return 1
        comfort(f"total parameters {report.total_params:,d} (matches enumeration); written to {kv_path}")
        return 0


def main():
    configure_logging()
    sys.exit(ParamsCommand().run(sys.argv[1:], prog="mmic20_params.py"))


########################
if __name__ == "__main__":
    main()
