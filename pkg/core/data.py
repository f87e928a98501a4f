"""
Dataset ingestion.
MNIST IDX parsing, average-pool downsampling, grey-level normalization and class subsets.
"""

import gzip
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Union

import numpy as np

from core.errors import (
    BadMagicError,
    DataFormatError,
    EmptySubsetError,
    TruncatedFileError,
    UnsupportedResolutionError,
)

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
SUPPORTED_RESOLUTIONS = (4, 8, 16)

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    """Images (N, h, w), labels (N,) and the original-label -> class-index map."""
    images: np.ndarray
    labels: np.ndarray
    class_map: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.images) != len(self.labels):
            raise DataFormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if not self.class_map:
            self.class_map = {int(v): int(v) for v in np.unique(self.labels)}

    def __len__(self):
        return len(self.labels)

    @property
    def class_count(self) -> int:
        return len(self.class_map)

    @property
    def shape(self):
        return tuple(self.images.shape[1:])


def _read_bytes(path: Union[str, Path]) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, 'rb') as f:
            return f.read()
    except (IOError, OSError) as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e


def _parse_header(data: bytes, magic: int, dims: int, path) -> tuple:
    header_size = 4 * (1 + dims)
    if len(data) < header_size:
        raise TruncatedFileError(f"{path}: {len(data)} bytes is shorter than the IDX header")
    found, *shape = struct.unpack(f">{1 + dims}I", data[:header_size])
    if found != magic:
        raise BadMagicError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    expected = int(np.prod(shape))
    if len(data) - header_size < expected:
        raise TruncatedFileError(f"{path}: header declares {expected} bytes, file holds {len(data) - header_size}")
    return header_size, tuple(shape)


def read_idx_images(path: Union[str, Path]) -> np.ndarray:
    data = _read_bytes(path)
    offset, shape = _parse_header(data, IMAGE_MAGIC, 3, path)
    return np.frombuffer(data, dtype=np.uint8, count=int(np.prod(shape)), offset=offset).reshape(shape)


def read_idx_labels(path: Union[str, Path]) -> np.ndarray:
    data = _read_bytes(path)
    offset, shape = _parse_header(data, LABEL_MAGIC, 1, path)
    return np.frombuffer(data, dtype=np.uint8, count=shape[0], offset=offset).astype(int)


def load_idx(images_path: Union[str, Path], labels_path: Union[str, Path]) -> Dataset:
    """Raw dataset: pixels as bytes 0-255, labels as digits."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise DataFormatError(f"{len(images)} images but {len(labels)} labels")
    logger.info("loaded %d images of %dx%d from %s", len(images), *images.shape[1:], images_path)
    return Dataset(images, labels)


def _find(data_dir: Path, name: str) -> Path:
    candidates = [name, name + ".gz", name.replace("-idx", ".idx"), name.replace("-idx", ".idx") + ".gz"]
    for candidate in candidates:
        if (data_dir / candidate).exists():
            return data_dir / candidate
    raise DataFormatError(f"{name} not found in {data_dir}")


def load_mnist(data_dir: Union[str, Path], split: str = "train") -> Dataset:
    """Locate the standard MNIST IDX files (optionally gzipped) for a split."""
    if split not in MNIST_FILES:
        raise DataFormatError(f"unknown split '{split}'")
    data_dir = Path(data_dir)
    images_name, labels_name = MNIST_FILES[split]
    return load_idx(_find(data_dir, images_name), _find(data_dir, labels_name))


def normalize(matrix) -> np.ndarray:
    """Grey levels to [0, 1]; integer bytes and values above 1 are scaled by 1/255."""
    array = np.asarray(matrix)
    if np.issubdtype(array.dtype, np.integer) or np.any(array > 1.0):
        array = array / 255.0
    return np.clip(array.astype(float), 0.0, 1.0)


def downsample(image, target: int) -> np.ndarray:
    """Average-pool a square byte image to target x target, then scale to [0, 1]."""
    if target not in SUPPORTED_RESOLUTIONS:
        raise UnsupportedResolutionError(f"resolution {target} not in {SUPPORTED_RESOLUTIONS}")
    image = np.asarray(image, dtype=float)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise DataFormatError(f"expected a square image, got shape {image.shape}")
    size = image.shape[0]
    padded_size = -(-size // target) * target
    if padded_size != size:
        before = (padded_size - size) // 2
        image = np.pad(image, ((before, padded_size - size - before),) * 2)
    block = padded_size // target
    pooled = image.reshape(target, block, target, block).mean(axis=(1, 3))
    return pooled / 255.0


def prepare(dataset: Dataset, resolution: Optional[int]) -> Dataset:
    """Downsample every image (or only normalize when resolution is None)."""
    if resolution is None:
        images = normalize(dataset.images)
    else:
        images = np.stack([downsample(img, resolution) for img in dataset.images]) if len(dataset) \
            else np.zeros((0, resolution, resolution))
    return Dataset(images, dataset.labels.copy(), dict(dataset.class_map))


def subset(dataset: Dataset, digits: Iterable[int]) -> Dataset:
    """Keep the listed digits, relabeled 0..c-1 in ascending digit order."""
    digits = sorted({int(d) for d in digits})
    if not digits:
        raise EmptySubsetError("no digits requested")
    inverse = {local: original for original, local in dataset.class_map.items()}
    originals = np.array([inverse.get(int(v), int(v)) for v in dataset.labels])
    keep = np.isin(originals, digits)
    missing = sorted(set(digits) - {int(v) for v in originals[keep]})
    if missing:
        raise EmptySubsetError(f"no samples with labels {missing}")
    class_map = {d: i for i, d in enumerate(digits)}
    relabeled = np.array([class_map[int(v)] for v in originals[keep]], dtype=int)
    logger.debug("subset %s: %d samples", digits, relabeled.size)
    return Dataset(dataset.images[keep], relabeled, class_map)
