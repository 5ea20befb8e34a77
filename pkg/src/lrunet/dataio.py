"""Dataset loaders (CIFAR binary and IDX formats) plus checkpoint files.

Loaders validate exact byte counts before parsing anything; a short or
oversized file is rejected with the offset where the record grid breaks,
never silently truncated.  Images come back as uint8 in (count, C, H, W)
layout with values in [0, 255].

Checkpoints are a small binary container: magic and version, a JSON
header (network spec and normalization statistics), then every
persistent tensor in the network's canonical order as
(name, shape, little-endian float32 data).  Saving and loading round-trip
bit-exactly, running statistics included.
"""

import gzip
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError
from .network import LruNet, NetworkSpec, build_network

CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)

FASHION_MNIST_CLASSES = (
    "T-shirt/top", "Trouser", "Pullover", "Dress", "Coat",
    "Sandal", "Shirt", "Sneaker", "Bag", "Ankle boot",
)

# Fine labels in their canonical (alphabetical) index order.
CIFAR100_FINE_CLASSES = (
    "apple", "aquarium_fish", "baby", "bear", "beaver", "bed", "bee", "beetle",
    "bicycle", "bottle", "bowl", "boy", "bridge", "bus", "butterfly", "camel",
    "can", "castle", "caterpillar", "cattle", "chair", "chimpanzee", "clock",
    "cloud", "cockroach", "couch", "crab", "crocodile", "cup", "dinosaur",
    "dolphin", "elephant", "flatfish", "forest", "fox", "girl", "hamster",
    "house", "kangaroo", "keyboard", "lamp", "lawn_mower", "leopard", "lion",
    "lizard", "lobster", "man", "maple_tree", "motorcycle", "mountain",
    "mouse", "mushroom", "oak_tree", "orange", "orchid", "otter", "palm_tree",
    "pear", "pickup_truck", "pine_tree", "plain", "plate", "poppy",
    "porcupine", "possum", "rabbit", "raccoon", "ray", "road", "rocket",
    "rose", "sea", "seal", "shark", "shrew", "skunk", "skyscraper", "snail",
    "snake", "spider", "squirrel", "streetcar", "sunflower", "sweet_pepper",
    "table", "tank", "telephone", "television", "tiger", "tractor", "train",
    "trout", "tulip", "turtle", "wardrobe", "whale", "willow_tree", "wolf",
    "woman", "worm",
)


@dataclass
class LabeledImageSet:
    """Images plus integer labels for one dataset split."""

    images: np.ndarray  # (count, C, H, W) uint8
    labels: np.ndarray  # (count,) int64
    class_names: tuple
    split: str

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DataError(
                f"{self.split}: images must be (count, C, H, W), got {self.images.shape}"
            )
        if len(self.images) != len(self.labels):
            raise DataError(
                f"{self.split}: {len(self.images)} images but {len(self.labels)} labels"
            )
        if len(self.labels) and self.labels.max() >= len(self.class_names):
            raise DataError(
                f"{self.split}: label {int(self.labels.max())} out of range "
                f"for {len(self.class_names)} classes"
            )

    def __len__(self) -> int:
        return len(self.images)


def _read_file(path: str) -> bytes:
    if not os.path.isfile(path):
        raise DataError(f"dataset file not found: {path}")
    with open(path, "rb") as fh:
        return fh.read()


def _parse_cifar_records(data: bytes, path: str, record_len: int, expect_records: int):
    """Split a CIFAR-style file into fixed-size records, validating length."""
    if len(data) % record_len != 0:
        good = (len(data) // record_len) * record_len
        raise FormatError(
            f"{path}: length {len(data)} is not a multiple of the {record_len}-byte "
            f"record size; record grid breaks at offset {good}"
        )
    count = len(data) // record_len
    if count != expect_records:
        raise FormatError(f"{path}: expected {expect_records} records, found {count}")
    return np.frombuffer(data, dtype=np.uint8).reshape(count, record_len)


def _cifar10_split(paths, split):
    images, labels = [], []
    for path in paths:
        rec = _parse_cifar_records(_read_file(path), path, 3073, 10000)
        lab = rec[:, 0].astype(np.int64)
        if lab.max() >= 10:
            bad = int(np.argmax(lab >= 10))
            raise DataError(
                f"{path}: record {bad} has label {int(lab[bad])}, valid range is [0, 10)"
            )
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32))
        labels.append(lab)
    return LabeledImageSet(np.concatenate(images), np.concatenate(labels),
                           CIFAR10_CLASSES, split)


def load_cifar10(directory: str):
    """Load the binary-batch layout: 5 train files and 1 test file of 10000 records."""
    train_paths = [os.path.join(directory, f"data_batch_{i}.bin") for i in range(1, 6)]
    train = _cifar10_split(train_paths, "train")
    test = _cifar10_split([os.path.join(directory, "test_batch.bin")], "test")
    return train, test


def load_cifar100(directory: str):
    """Load train.bin/test.bin; records carry (coarse, fine) labels, fine are targets."""
    def split(name, count, tag):
        path = os.path.join(directory, name)
        rec = _parse_cifar_records(_read_file(path), path, 3074, count)
        coarse = rec[:, 0]
        if coarse.max() >= 20:
            raise DataError(f"{path}: coarse label {int(coarse.max())} out of range")
        fine = rec[:, 1].astype(np.int64)
        if fine.max() >= 100:
            raise DataError(f"{path}: fine label {int(fine.max())} out of range")
        return LabeledImageSet(rec[:, 2:].reshape(-1, 3, 32, 32), fine,
                               CIFAR100_FINE_CLASSES, tag)

    return split("train.bin", 50000, "train"), split("test.bin", 10000, "test")


def _read_idx(path: str) -> bytes:
    data = _read_file(path)
    if data[:2] == b"\x1f\x8b":  # gzip, loaded transparently
        try:
            data = gzip.decompress(data)
        except OSError as e:
            raise FormatError(f"{path}: bad gzip stream ({e})") from None
    return data


def _find_idx(directory: str, stem: str) -> str:
    for name in (stem, stem + ".gz"):
        path = os.path.join(directory, name)
        if os.path.isfile(path):
            return path
    raise DataError(f"dataset file not found: {os.path.join(directory, stem)}[.gz]")


IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


def _idx_images(path: str) -> np.ndarray:
    data = _read_idx(path)
    if len(data) < 16:
        raise FormatError(f"{path}: too short for an image header")
    magic, count, rows, cols = struct.unpack(">4i", data[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{path}: image magic {magic}, expected {IDX_IMAGE_MAGIC}")
    body = len(data) - 16
    if body != count * rows * cols:
        raise FormatError(
            f"{path}: header promises {count}x{rows}x{cols} = {count * rows * cols} "
            f"bytes, file holds {body}"
        )
    return np.frombuffer(data, np.uint8, offset=16).reshape(count, 1, rows, cols)


def _idx_labels(path: str) -> np.ndarray:
    data = _read_idx(path)
    if len(data) < 8:
        raise FormatError(f"{path}: too short for a label header")
    magic, count = struct.unpack(">2i", data[:8])
    if magic != IDX_LABEL_MAGIC:
        raise FormatError(f"{path}: label magic {magic}, expected {IDX_LABEL_MAGIC}")
    if len(data) - 8 != count:
        raise FormatError(f"{path}: header promises {count} labels, file holds {len(data) - 8}")
    return np.frombuffer(data, np.uint8, offset=8).astype(np.int64)


def load_fashion_mnist(directory: str):
    """Load the IDX files (gzip-compressed or raw) of both splits."""
    def split(images_stem, labels_stem, tag):
        images = _idx_images(_find_idx(directory, images_stem))
        labels = _idx_labels(_find_idx(directory, labels_stem))
        if len(images) != len(labels):
            raise DataError(
                f"{tag}: {len(images)} images but {len(labels)} labels in {directory}"
            )
        return LabeledImageSet(images, labels, FASHION_MNIST_CLASSES, tag)

    return (split("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "train"),
            split("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", "test"))


DATASETS = {
    "cifar10": dict(loader=load_cifar10, input_shape=(3, 32, 32), num_classes=10),
    "cifar100": dict(loader=load_cifar100, input_shape=(3, 32, 32), num_classes=100),
    "fashion-mnist": dict(loader=load_fashion_mnist, input_shape=(1, 28, 28), num_classes=10),
}


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"LRUN"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, net: LruNet, norm_stats=None):
    """Write spec, normalization stats and all persistent tensors to one file."""
    mean, std = norm_stats if norm_stats is not None else (None, None)
    header = {
        "spec": net.spec.to_dict(),
        "norm_mean": None if mean is None else np.asarray(mean, np.float32).tolist(),
        "norm_std": None if std is None else np.asarray(std, np.float32).tolist(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, arr in net.state_items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str):
    """Read a checkpoint; returns (spec, norm_stats, ordered name -> array)."""
    data = _read_file(path)
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {data[:4]!r})")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"{path}: format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )
    (hlen,) = struct.unpack_from("<I", data, 8)
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: bad header ({e})") from None
    spec = NetworkSpec.from_dict(header["spec"])
    norm_stats = None
    if header.get("norm_mean") is not None:
        norm_stats = (np.asarray(header["norm_mean"], np.float32),
                      np.asarray(header["norm_std"], np.float32))

    tensors = {}
    off = 12 + hlen
    while off < len(data):
        if off + 2 > len(data):
            raise FormatError(f"{path}: truncated at offset {off}")
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        end = off + 4 * size
        if end > len(data):
            raise FormatError(f"{path}: tensor {name!r} truncated at offset {off}")
        arr = np.frombuffer(data, "<f4", count=size, offset=off).reshape(shape)
        tensors[name] = np.ascontiguousarray(arr, dtype=np.float32)
        off = end
    return spec, norm_stats, tensors


def load_state(net: LruNet, tensors: dict):
    """Copy loaded tensors into a network, enforcing the naming contract.

    The loaded name sequence must equal the network's canonical sequence;
    the first mismatch (missing, extra, reordered or reshaped) is reported.
    """
    expected = net.state_items()
    loaded_names = list(tensors)
    for i, (name, arr) in enumerate(expected):
        if i >= len(loaded_names) or loaded_names[i] != name:
            found = loaded_names[i] if i < len(loaded_names) else "nothing"
            raise FormatError(
                f"incompatible checkpoint: expected parameter {name!r}, found {found!r}"
            )
        if tensors[name].shape != arr.shape:
            raise FormatError(
                f"incompatible checkpoint: {name!r} has shape {tensors[name].shape}, "
                f"network expects {arr.shape}"
            )
    if len(loaded_names) > len(expected):
        raise FormatError(
            f"incompatible checkpoint: unknown parameter {loaded_names[len(expected)]!r}"
        )
    for name, arr in expected:
        arr[...] = tensors[name]


def restore_network(path: str):
    """Rebuild the network a checkpoint describes; returns (net, norm_stats)."""
    spec, norm_stats, tensors = load_checkpoint(path)
    net = build_network(spec)
    load_state(net, tensors)
    return net, norm_stats
