import gzip
import os
import struct

import numpy as np
import pytest

from lrunet.network import NetworkSpec, build_network

# Small all-purpose configuration: F=8 blocks, 16x16 input, no dropout.
TOY_FIELDS = dict(width_multiplier=0.125, num_classes=10,
                  input_shape=(3, 16, 16), dropout_rate=0.0)


def toy_spec(reuse_count=2, **overrides):
    fields = dict(TOY_FIELDS)
    fields.update(overrides)
    return NetworkSpec(reuse_count, **fields)


@pytest.fixture
def toy_net():
    net = build_network(toy_spec(), dtype=np.float64)
    net.init_parameters(0)
    return net


def write_cifar10_files(directory, seed=0):
    """Synthetic full-size binary batches; record 0 of batch 1 is a known pattern."""
    rng = np.random.default_rng(seed)
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]
    for k, name in enumerate(names):
        rec = np.empty((10000, 3073), dtype=np.uint8)
        rec[:, 0] = rng.integers(0, 10, 10000)
        rec[:, 1:] = rng.integers(0, 256, (10000, 3072))
        if k == 0:
            rec[0, 0] = 7
            rec[0, 1:] = 128
        with open(os.path.join(directory, name), "wb") as fh:
            fh.write(rec.tobytes())


def write_cifar100_files(directory, seed=0):
    rng = np.random.default_rng(seed)
    for name, count, per_class in (("train.bin", 50000, 500), ("test.bin", 10000, 100)):
        rec = np.empty((count, 3074), dtype=np.uint8)
        fine = rng.permutation(np.repeat(np.arange(100, dtype=np.uint8), per_class))
        rec[:, 0] = fine // 5  # arbitrary but valid coarse labels
        rec[:, 1] = fine
        rec[:, 2:] = rng.integers(0, 256, (count, 3072))
        with open(os.path.join(directory, name), "wb") as fh:
            fh.write(rec.tobytes())


def write_idx_images(path, images, compress=False):
    """images: (n, rows, cols) uint8."""
    n, rows, cols = images.shape
    blob = struct.pack(">4i", 2051, n, rows, cols) + images.tobytes()
    if compress:
        blob = gzip.compress(blob)
    with open(path, "wb") as fh:
        fh.write(blob)


def write_idx_labels(path, labels, compress=False):
    blob = struct.pack(">2i", 2049, len(labels)) + bytes(labels)
    if compress:
        blob = gzip.compress(blob)
    with open(path, "wb") as fh:
        fh.write(blob)


def write_fashion_files(directory, n_train=64, n_test=32, seed=0, compress=False):
    rng = np.random.default_rng(seed)
    for stem, lstem, n in (("train-images-idx3-ubyte", "train-labels-idx1-ubyte", n_train),
                           ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", n_test)):
        suffix = ".gz" if compress else ""
        images = rng.integers(0, 256, (n, 28, 28)).astype(np.uint8)
        labels = rng.integers(0, 10, n).astype(np.uint8)
        write_idx_images(os.path.join(directory, stem + suffix), images, compress)
        write_idx_labels(os.path.join(directory, lstem + suffix), labels, compress)


@pytest.fixture(scope="session")
def cifar10_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cifar10")
    write_cifar10_files(str(d))
    return str(d)


@pytest.fixture(scope="session")
def cifar100_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cifar100")
    write_cifar100_files(str(d))
    return str(d)


@pytest.fixture(scope="session")
def fashion_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("fashion")
    write_fashion_files(str(d))
    return str(d)


def real_fashion_mnist_dir():
    """Directory of the actual dataset if present; None in bare environments."""
    base = os.environ.get("LRUNET_DATA_DIR", "data")
    d = os.path.join(base, "fashion-mnist")
    stems = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte",
             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
    for stem in stems:
        if not (os.path.isfile(os.path.join(d, stem))
                or os.path.isfile(os.path.join(d, stem + ".gz"))):
            return None
    return d
