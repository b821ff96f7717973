#!/usr/bin/env python

"""
Classify a single image (.ppm, or a one-image .mmt tensor with values in [0, 1])
with a checkpoint. Prints the predicted class and the softmax probabilities.
"""
import sys
from argparse import ArgumentParser
from pathlib import Path

import numpy as np

from classes.mmic_command import MMICCommand, configure_logging
from models.backbone import Backbone
from utils.checkpoint import load_checkpoint, restore_model
from utils.dataset import normalize
from utils.errors import DatasetError
from utils.image_io import load_ppm
from utils.mmt import load_mmt
from utils.nn_ops import softmax
from utils.tensor import Tensor, no_grad
from utils.utils import comfort


def load_image(path: Path | str, in_channels: int) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        image = load_ppm(path)
        if in_channels == 1:
            image = image.mean(axis=-1, keepdims=True)
        return image
    image = load_mmt(path)
    if image.ndim == 4 and image.shape[0] == 1:
        image = image[0]
    if image.ndim != 3:
        raise DatasetError(f"{path}: expected a single S x S x ch image, got shape {image.shape}")
    return image


def predict_image(model: Backbone, image: np.ndarray) -> np.ndarray:
    """Class probabilities for one image, normalized as in training."""
    expected = (model.cfg.input_size, model.cfg.input_size, model.cfg.in_channels)
    if image.shape != expected:
        raise DatasetError(f"image is {image.shape}, the model expects {expected}")
    with no_grad():
        logits = model(Tensor(normalize(image).astype(model.cfg.np_dtype)))
    return softmax(logits.data.astype(np.float64))


class PredictCommand(MMICCommand):

    name = "predict"
    description = __doc__

    def add_arguments(self, parser: ArgumentParser):
        parser.add_argument("-k", "--checkpoint", dest="checkpoint", required=True, help="A .mmic checkpoint.")
        parser.add_argument("-i", "--image", dest="image", required=True, help="Image to classify (.ppm or .mmt).")

    def execute(self) -> int:
        cfg, model = restore_model(load_checkpoint(self.args.checkpoint))
        probabilities = predict_image(model, load_image(self.args.image, cfg.model.in_channels))
        predicted = int(probabilities.argmax())
        for k, probability in enumerate(probabilities):
            print(f"class {k}: {probability:.6f}")
        comfort(f"{self.args.image}: class {predicted}")
        return 0


def main():
    configure_logging()
    sys.exit(PredictCommand().run(sys.argv[1:], prog="mmic12_predict.py"))


########################
if __name__ == "__main__":
    main()
