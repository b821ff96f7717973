"""
Checkpoint container (.mmic), little endian throughout:

    b"MMIC" | u32 version
    u32 length | resolved run config (UTF-8 JSON, verbatim)
    u32 count  | count x (u16 name length | UTF-8 name | .mmt tensor record)
    u8 has_optimizer | [u32 count | tensor table as above]
    u32 length | best-metric record (UTF-8 JSON)
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mmic00_settings import CHECKPOINT
from models.backbone import ModelConfig, build_model
from utils.config import RunConfig, parse_config_text
from utils.errors import FormatError
from utils.mmt import decode_tensor, encode_tensor

logger = logging.getLogger(__name__)


@dataclass
class Checkpoint:
    config_text: str
    tensors: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] | None = None
    best_metric: dict = field(default_factory=dict)


class _Reader:

    def __init__(self, blob: bytes, source: str):
        self.blob, self.offset, self.source = blob, 0, source

    def take(self, n_bytes: int, what: str) -> bytes:
        if self.offset + n_bytes > len(self.blob):
            raise FormatError(f"{self.source}: truncated {what}")
        chunk = self.blob[self.offset:self.offset + n_bytes]
        self.offset += n_bytes
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))[0]

    def tensor(self, what: str) -> np.ndarray:
        try:
            array, self.offset = decode_tensor(self.blob, self.offset, source=f"{self.source} ({what})")
        except struct.error:
            raise FormatError(f"{self.source}: truncated {what}")
        return array


def _encode_table(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name, array in tensors.items():
        encoded_name = name.encode("utf-8")
        parts += [struct.pack("<H", len(encoded_name)), encoded_name, encode_tensor(array)]
    return b"".join(parts)


def _decode_table(reader: _Reader, what: str) -> dict[str, np.ndarray]:
    table = {}
    for _ in range(reader.unpack("<I", f"{what} count")):
        name = reader.take(reader.unpack("<H", f"{what} name length"), f"{what} name").decode("utf-8")
        table[name] = reader.tensor(f"{what} '{name}'")
    return table


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    config_bytes = checkpoint.config_text.encode("utf-8")
    metric_bytes = json.dumps(checkpoint.best_metric).encode("utf-8")
    parts = [CHECKPOINT["magic"], struct.pack("<I", CHECKPOINT["version"]),
             struct.pack("<I", len(config_bytes)), config_bytes,
             _encode_table(checkpoint.tensors)]
    if checkpoint.optimizer is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts += [struct.pack("<B", 1), _encode_table(checkpoint.optimizer)]
    parts += [struct.pack("<I", len(metric_bytes)), metric_bytes]
    return b"".join(parts)


def decode_checkpoint(blob: bytes, source: str = "checkpoint") -> Checkpoint:
    reader = _Reader(blob, source)
    magic = reader.take(4, "magic")
    if magic != CHECKPOINT["magic"]:
        raise FormatError(f"{source}: bad magic {magic!r}, not a checkpoint")
    version = reader.unpack("<I", "version")
    if version != CHECKPOINT["version"]:
        raise FormatError(f"{source}: format version {version}, this build reads version {CHECKPOINT['version']}")
    config_text = reader.take(reader.unpack("<I", "config length"), "config").decode("utf-8")
    tensors = _decode_table(reader, "tensor table")
    optimizer = _decode_table(reader, "optimizer table") if reader.unpack("<B", "optimizer flag") else None
    best_metric = json.loads(reader.take(reader.unpack("<I", "metric length"), "metric record").decode("utf-8"))
    return Checkpoint(config_text, tensors, optimizer, best_metric)


def save_checkpoint(checkpoint: Checkpoint, path: Path | str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(checkpoint))
    logger.info(f"checkpoint written to {path}")


def load_checkpoint(path: Path | str) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: no such checkpoint")
    return decode_checkpoint(path.read_bytes(), source=str(path))


########################################################################
def make_checkpoint(cfg: RunConfig, model, optim_state=None, best_metric: dict | None = None) -> Checkpoint:
    tensors = {name: tensor.data for name, tensor in model.named_parameters()}
    optimizer = optim_state.tensors() if optim_state is not None else None
    return Checkpoint(cfg.to_json(), tensors, optimizer, best_metric or {})


def restore_model(checkpoint: Checkpoint, model_cfg: ModelConfig | None = None):
    """(RunConfig, Backbone) rebuilt from the embedded config (or model_cfg), weights loaded by name."""
    cfg = parse_config_text(checkpoint.config_text, check_paths=False)
    model = build_model(model_cfg or cfg.model, cfg.seed)
    model.load_state_dict(checkpoint.tensors)
    return cfg, model
