import io
import re
from pathlib import Path

import numpy as np
from PIL import Image as PilImage

from utils.errors import FormatError

# magic, width, height, maxval, then exactly one whitespace byte before the payload
PPM_HEADER = re.compile(rb"\A(P\d)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


def parse_ppm_header(blob: bytes, source: str = "ppm") -> tuple[int, int, int]:
    """Returns (width, height, payload offset) of a binary 8-bit PPM."""
    if blob[:2] != b"P6":
        raise FormatError(f"{source}: unsupported format {blob[:2]!r}, only binary PPM (P6) is read")
    match = PPM_HEADER.match(blob)
    if match is None:
        raise FormatError(f"{source}: malformed PPM header")
    width, height, maxval = (int(group) for group in match.groups()[1:])
    if maxval != 255:
        raise FormatError(f"{source}: unsupported maxval {maxval}, expected 255")
    if width == 0 or height == 0:
        raise FormatError(f"{source}: empty image {width}x{height}")
    payload = len(blob) - match.end()
    if payload < width * height * 3:
        raise FormatError(f"{source}: truncated payload ({payload} of {width * height * 3} bytes)")
    return width, height, match.end()


def load_ppm(path: Path | str) -> np.ndarray:
    """H x W x 3 float64 image scaled to [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: no such file")
    blob = path.read_bytes()
    parse_ppm_header(blob, source=str(path))
    with PilImage.open(io.BytesIO(blob)) as pil_image:
        pixels = np.asarray(pil_image.convert("RGB"), dtype=np.float64)
    return pixels / 255.0


def save_ppm(path: Path | str, image: np.ndarray):
    """image: H x W x 3 (or H x W x 1 grayscale, replicated) with values in [0, 1]."""
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[-1] == 1:
        image = np.repeat(image, 3, axis=-1)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise FormatError(f"save_ppm: expected an H x W x 3 image, got {image.shape}")
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    PilImage.fromarray(pixels).save(Path(path), format="PPM")
