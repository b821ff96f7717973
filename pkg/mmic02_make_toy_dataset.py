#!/usr/bin/env python

"""
Write the seeded two-class stripe texture set (class 0 horizontal, class 1 vertical stripes)
either as an .mmt pair (images.mmt, images_labels.mmt) or as a PPM directory with labels.csv,
together with a run config (toy.json) pointing at it.
"""
import json
import sys
from argparse import ArgumentParser
from pathlib import Path

from classes.mmic_command import MMICCommand, configure_logging
from utils.image_io import save_ppm
from utils.mmt import save_mmt
from utils.synthetic import make_stripes
from utils.utils import comfort


def write_toy_dataset(out_dir: Path | str, n_samples: int = 2000, size: int = 32, seed: int = 0,
                      channels: int = 3, as_ppm: bool = False) -> Path:
    """Returns the path to write into the 'data' field of a run config."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images, labels = make_stripes(n_samples, size, seed, channels)
    if not as_ppm:
        save_mmt(out_dir / "images.mmt", images)
        save_mmt(out_dir / "images_labels.mmt", labels)
        return out_dir / "images.mmt"
    image_dir = out_dir / "images"
    image_dir.mkdir(exist_ok=True)
    manifest = []
    for i, (image, label) in enumerate(zip(images, labels)):
        name = f"stripes_{i:05d}.ppm"
        save_ppm(image_dir / name, image)
        manifest.append(f"{name},{int(label)}")
    (image_dir / "labels.csv").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    return image_dir


class MakeToyCommand(MMICCommand):

    name = "make-toy"
    description = __doc__

    def add_arguments(self, parser: ArgumentParser):
        parser.add_argument("-o", "--out-dir", dest="out_dir", required=True, help="Output directory.")
        parser.add_argument("-N", "--n-samples", dest="n_samples", type=int, default=2000, help="Default: 2000.")
        parser.add_argument("-s", "--size", dest="size", type=int, default=32, help="Image side. Default: 32.")
        parser.add_argument("--channels", dest="channels", type=int, choices=[1, 3], default=3, help="Default: 3.")
        parser.add_argument("--seed", dest="seed", type=int, default=0, help="Generator seed. Default: 0.")
        parser.add_argument("--ppm", dest="as_ppm", action="store_true",
                            help="Write PPM images and a manifest instead of an .mmt pair. Default: False")

    def execute(self) -> int:
        if self.args.n_samples < 1:
            self.parser.error("--n-samples must be positive")
        data = write_toy_dataset(self.args.out_dir, self.args.n_samples, self.args.size, self.args.seed,
                                 self.args.channels, self.args.as_ppm)
        out_dir = Path(self.args.out_dir)
        config = {"variant": "tiny", "data": str(data.relative_to(out_dir)), "classes": 2,
                  "in_channels": self.args.channels, "input_size": self.args.size, "epochs": 50,
                  "output_dir": "toy_run"}
        (out_dir / "toy.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
        comfort(f"{self.args.n_samples} images written; run config in {out_dir / 'toy.json'}")
        return 0


def main():
    configure_logging()
    sys.exit(MakeToyCommand().run(sys.argv[1:], prog="mmic02_make_toy_dataset.py"))


########################
if __name__ == "__main__":
    main()
