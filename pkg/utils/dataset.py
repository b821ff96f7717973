"""
Dataset ingestion, stratified splitting, batching and normalization.

Two sources are understood:
    - an .mmt pair: images N x S x S x ch (values in [0, 1]) and labels N
    - a directory of binary PPM images with a manifest, one `relative/path,label_index` per line
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from mmic00_settings import DATA
from utils.errors import DatasetError, FormatError
from utils.image_io import load_ppm
from utils.mmt import load_mmt
from utils.tensor import Tensor

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
# every record regardless of its split
ALL = "all"
UNASSIGNED = ""


@dataclass
class DatasetIndex:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    sources: list[str] = field(default_factory=list)
    split: np.ndarray | None = None

    def __post_init__(self):
        if self.split is None:
            self.split = np.full(len(self.labels), UNASSIGNED, dtype=object)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def members(self, split: str) -> np.ndarray:
        if split == ALL:
            return np.arange(len(self.labels))
        return np.flatnonzero(self.split == split)

    def split_counts(self) -> dict[str, np.ndarray]:
        """Per split, the number of records of each class."""
        return {name: np.bincount(self.labels[self.members(name)], minlength=self.num_classes) for name in SPLITS}


@dataclass
class Batch:
    images: Tensor
    labels: np.ndarray
    record_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def _checked_labels(raw: np.ndarray, num_classes: int | None, source: str) -> tuple[np.ndarray, int]:
    raw = np.asarray(raw).reshape(-1)
    if raw.size and not np.all(raw == np.round(raw)):
        raise DatasetError(f"{source}: labels must be integral class indices")
    labels = raw.astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DatasetError(f"{source}: labels must lie in [0, {num_classes}), found {labels.min()}..{labels.max()}")
    return labels, num_classes


def load_raw_dataset(images_path: Path | str, labels_path: Path | str, num_classes: int | None = None) -> DatasetIndex:
    images = load_mmt(images_path)
    raw_labels = load_mmt(labels_path)
    if images.ndim != 4:
        raise DatasetError(f"{images_path}: expected an N x S x S x ch image tensor, got shape {images.shape}")
    if images.shape[0] != raw_labels.size:
        raise DatasetError(f"count mismatch: {images.shape[0]} images vs {raw_labels.size} labels")
    if images.shape[0] == 0:
        raise DatasetError("empty dataset")
    labels, num_classes = _checked_labels(raw_labels, num_classes, str(labels_path))
    sources = [f"{Path(images_path).name}#{i}" for i in range(len(labels))]
    return DatasetIndex(images, labels, num_classes, sources)


def read_manifest(manifest_path: Path | str) -> list[tuple[str, int]]:
    entries = []
    text = Path(manifest_path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        path, sep, label = line.rpartition(",")
        if not sep or not path:
            raise DatasetError(f"{manifest_path}:{lineno}: expected 'relative/path,label_index'")
        try:
            entries.append((path, int(label)))
        except ValueError:
            raise DatasetError(f"{manifest_path}:{lineno}: label '{label}' is not an integer")
    return entries


def load_ppm_dataset(image_dir: Path | str, manifest_path: Path | str, num_classes: int | None = None,
                     in_channels: int = 3) -> DatasetIndex:
    image_dir = Path(image_dir)
    entries = read_manifest(manifest_path)
    if not entries:
        raise DatasetError("empty dataset")
    images = []
    for relative, _ in entries:
        image = load_ppm(image_dir / relative)
        if in_channels == 1:
            image = image.mean(axis=-1, keepdims=True)
        if images and image.shape != images[0].shape:
            raise DatasetError(f"{relative}: geometry {image.shape} differs from {images[0].shape}")
        images.append(image)
    labels, num_classes = _checked_labels(np.array([label for _, label in entries]), num_classes, str(manifest_path))
    return DatasetIndex(np.stack(images), labels, num_classes, [relative for relative, _ in entries])


def load_dataset(data_path: Path | str, labels_path: Path | str, num_classes: int | None = None,
                 in_channels: int = 3) -> DatasetIndex:
    """A directory means PPM images plus manifest, anything else an .mmt pair."""
    data_path = Path(data_path)
    if data_path.is_dir():
        return load_ppm_dataset(data_path, labels_path, num_classes, in_channels)
    if not data_path.is_file():
        raise FormatError(f"{data_path}: no such file or directory")
    return load_raw_dataset(data_path, labels_path, num_classes)


########################################################################
def split_quotas(count: int, ratio: tuple[int, ...]) -> list[int]:
    """Floor of the exact shares, leftovers to the largest remainders (ties go to the earlier split).

    With at least one record per split available, no split is left empty: the largest quota gives one up.
    """
    total = sum(ratio)
    quotas = [count * part // total for part in ratio]
    remainders = [count * part % total for part in ratio]
    for position in sorted(range(len(ratio)), key=lambda i: (-remainders[i], i))[:count - sum(quotas)]:
        quotas[position] += 1
    if count >= len(ratio):
        for position in range(len(ratio)):
            if quotas[position] == 0:
                donor = max(range(len(ratio)), key=lambda i: (quotas[i], -i))
                quotas[donor] -= 1
                quotas[position] += 1
    return quotas


def class_quotas(class_sizes: list[int], ratio: tuple[int, ...]) -> np.ndarray:
    """Per-class split counts: rows sum to the class sizes, columns to split_quotas of the whole set.

    Every class starts from the floor of its exact shares. The records left over go one per (class, split)
    pair, favouring the largest remainders, so each class stays within one record of its exact share.
    """
    total = sum(ratio)
    sizes = np.asarray(class_sizes, dtype=np.int64)
    parts = np.asarray(ratio, dtype=np.int64)
    numerators = sizes[:, None] * parts[None, :]
    counts = numerators // total
    remainders = numerators - counts * total
    targets = np.asarray(split_quotas(int(sizes.sum()), ratio), dtype=np.int64)

    # a split that lost records to the non-empty rule may hold more floors than its target
    for position in range(len(ratio)):
        while counts[:, position].sum() > targets[position]:
            label = int(np.argmax(counts[:, position]))
            counts[label, position] -= 1
            remainders[label, position] += total

    leftovers = sizes - counts.sum(axis=1)
    room = targets - counts.sum(axis=0)
    if leftovers.sum() == 0:
        return counts
    # transportation problem with unit capacities: its simplex vertex is integral
    n_classes, n_splits = counts.shape
    row_sums = np.kron(np.eye(n_classes), np.ones(n_splits))
    column_sums = np.kron(np.ones(n_classes), np.eye(n_splits))
    result = linprog(-remainders.ravel().astype(float), A_eq=np.vstack([row_sums, column_sums]),
                     b_eq=np.concatenate([leftovers, room]).astype(float), bounds=(0, 1), method="highs-ds")
    if result.status == 0:
        return counts + np.rint(result.x).astype(np.int64).reshape(counts.shape)
    # no way to keep every class within one record of its share; fill in order
    for label in np.flatnonzero(leftovers):
        for position in np.flatnonzero(room):
            moved = min(leftovers[label], room[position])
            counts[label, position] += moved
            leftovers[label] -= moved
            room[position] -= moved
    return counts


def split_dataset(index: DatasetIndex, ratio: tuple[int, int, int] = DATA["split_ratio"],
                  seed: int = DATA["seed"]) -> DatasetIndex:
    """Per-class stratified shuffle; deterministic for a fixed seed.

    Split sizes follow the ratio over the whole set, so val and test are non-empty from three records on.
    """
    if len(ratio) != 3 or any(part <= 0 for part in ratio):
        raise DatasetError(f"split ratio must have three positive parts, got {ratio}")
    rng = np.random.default_rng(seed)
    split = np.full(len(index), UNASSIGNED, dtype=object)
    members_of = [np.flatnonzero(index.labels == label) for label in range(index.num_classes)]
    counts = class_quotas([members.size for members in members_of], tuple(ratio))
    for label, members in enumerate(members_of):
        if members.size == 0:
            continue
        if members.size < 3:
            logger.warning(f"class {label} has only {members.size} sample(s); some splits will not contain it")
        shuffled = rng.permutation(members)
        start = 0
        for name, quota in zip(SPLITS, counts[label]):
            split[shuffled[start:start + quota]] = name
            start += quota
    return replace(index, split=split)


def normalize(x: np.ndarray, mean: float = DATA["norm_mean"], std: float = DATA["norm_std"]) -> np.ndarray:
    return (np.asarray(x) - mean) / std


def make_batches(index: DatasetIndex, split: str, batch_size: int, seed: int = DATA["seed"], epoch: int = 0,
                 dtype=np.float64) -> list[Batch]:
    """Train batches are reshuffled every epoch with a (seed, epoch) generator; val/test keep record order."""
    if split not in SPLITS + (ALL,):
        raise DatasetError(f"unknown split '{split}' (expected one of {', '.join(SPLITS + (ALL,))})")
    if batch_size < 1:
        raise DatasetError(f"batch size must be positive, got {batch_size}")
    members = index.members(split)
    if members.size == 0:
        raise DatasetError(f"the {split} split is empty")
    if split == "train":
        members = np.random.default_rng([seed, epoch]).permutation(members)
    batches = []
    for start in range(0, members.size, batch_size):
        ids = members[start:start + batch_size]
        images = Tensor(normalize(index.images[ids]).astype(dtype))
        batches.append(Batch(images, index.labels[ids], ids))
    return batches
