import os

import numpy as np
import pytest

from lrunet import dataio
from lrunet.errors import DataError, FormatError
from lrunet.network import build_network

from conftest import (toy_spec, write_cifar10_files, write_fashion_files,
                      write_idx_images, write_idx_labels)


# -- CIFAR binary ------------------------------------------------------------


def test_cifar10_load(cifar10_dir):
    train, test = dataio.load_cifar10(cifar10_dir)
    assert train.images.shape == (50000, 3, 32, 32)
    assert test.images.shape == (10000, 3, 32, 32)
    assert train.images.dtype == np.uint8
    assert train.labels.dtype == np.int64
    assert len(train.class_names) == 10
    # planted record: batch 1 record 0
    assert train.labels[0] == 7
    assert np.all(train.images[0] == 128)
    assert train.labels.min() >= 0 and train.labels.max() <= 9


def test_cifar10_truncated(tmp_path):
    write_cifar10_files(str(tmp_path))
    path = tmp_path / "data_batch_3.bin"
    blob = path.read_bytes()
    path.write_bytes(blob[:-100])
    with pytest.raises(FormatError, match="offset"):
        dataio.load_cifar10(str(tmp_path))


def test_cifar10_wrong_record_count(tmp_path):
    write_cifar10_files(str(tmp_path))
    path = tmp_path / "data_batch_1.bin"
    path.write_bytes(path.read_bytes()[: 3073 * 9999])
    with pytest.raises(FormatError, match="9999"):
        dataio.load_cifar10(str(tmp_path))


def test_cifar10_bad_label(tmp_path):
    write_cifar10_files(str(tmp_path))
    path = tmp_path / "data_batch_2.bin"
    blob = bytearray(path.read_bytes())
    blob[3073 * 5] = 12  # label byte of record 5
    path.write_bytes(bytes(blob))
    with pytest.raises(DataError, match="record 5"):
        dataio.load_cifar10(str(tmp_path))


def test_cifar10_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        dataio.load_cifar10(str(tmp_path))


def test_cifar100_load(cifar100_dir):
    train, test = dataio.load_cifar100(cifar100_dir)
    assert train.images.shape == (50000, 3, 32, 32)
    assert test.images.shape == (10000, 3, 32, 32)
    assert len(train.class_names) == 100
    counts = np.bincount(train.labels, minlength=100)
    assert np.all(counts == 500)
    assert np.all(np.bincount(test.labels, minlength=100) == 100)


def test_cifar100_fine_label_out_of_range(tmp_path, cifar100_dir):
    src = open(os.path.join(cifar100_dir, "train.bin"), "rb").read()
    blob = bytearray(src)
    blob[3074 * 2 + 1] = 100  # fine label byte of record 2
    (tmp_path / "train.bin").write_bytes(bytes(blob))
    (tmp_path / "test.bin").write_bytes(
        open(os.path.join(cifar100_dir, "test.bin"), "rb").read())
    with pytest.raises(DataError, match="fine label"):
        dataio.load_cifar100(str(tmp_path))


# -- IDX ---------------------------------------------------------------------


def test_fashion_load(fashion_dir):
    train, test = dataio.load_fashion_mnist(fashion_dir)
    assert train.images.shape == (64, 1, 28, 28)
    assert test.images.shape == (32, 1, 28, 28)
    assert train.split == "train" and test.split == "test"


def test_idx_gzip_equals_raw(tmp_path):
    raw = tmp_path / "raw"
    gz = tmp_path / "gz"
    raw.mkdir()
    gz.mkdir()
    write_fashion_files(str(raw), seed=5, compress=False)
    write_fashion_files(str(gz), seed=5, compress=True)
    a, _ = dataio.load_fashion_mnist(str(raw))
    b, _ = dataio.load_fashion_mnist(str(gz))
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, b.labels)


def test_idx_wrong_magic(tmp_path):
    images = np.zeros((4, 28, 28), np.uint8)
    write_idx_labels(str(tmp_path / "file"), [0, 1, 2, 3])
    with pytest.raises(FormatError, match="magic"):
        dataio._idx_images(str(tmp_path / "file"))
    write_idx_images(str(tmp_path / "file2"), images)
    with pytest.raises(FormatError, match="magic"):
        dataio._idx_labels(str(tmp_path / "file2"))


def test_idx_truncated_body(tmp_path):
    path = tmp_path / "imgs"
    write_idx_images(str(path), np.zeros((4, 28, 28), np.uint8))
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(FormatError, match="holds"):
        dataio._idx_images(str(path))


def test_fashion_count_mismatch(tmp_path):
    write_fashion_files(str(tmp_path))
    write_idx_labels(str(tmp_path / "train-labels-idx1-ubyte"), [1, 2, 3])
    with pytest.raises(DataError, match="labels"):
        dataio.load_fashion_mnist(str(tmp_path))


def test_dataset_registry():
    assert set(dataio.DATASETS) == {"cifar10", "cifar100", "fashion-mnist"}
    assert dataio.DATASETS["fashion-mnist"]["input_shape"] == (1, 28, 28)
    assert dataio.DATASETS["cifar100"]["num_classes"] == 100


def test_labeled_set_validation():
    with pytest.raises(DataError):
        dataio.LabeledImageSet(np.zeros((4, 3, 8, 8), np.uint8),
                               np.zeros(3, np.int64), ["a"], "train")
    with pytest.raises(DataError):
        dataio.LabeledImageSet(np.zeros((4, 8, 8), np.uint8),
                               np.zeros(4, np.int64), ["a"], "train")


# -- checkpoints -------------------------------------------------------------


def trained_toy_net():
    net = build_network(toy_spec(), dtype=np.float64)
    net.init_parameters(11)
    # nudge running stats away from the fresh-init values so the round trip
    # is actually exercised on them
    x = np.random.default_rng(12).normal(size=(4, 3, 16, 16))
    net.forward(x, train=True)
    net._tape.clear()
    return net


def test_checkpoint_round_trip(tmp_path):
    net = trained_toy_net()
    stats = (np.full(3, 0.5, np.float32), np.full(3, 0.25, np.float32))
    path = str(tmp_path / "a.ckpt")
    dataio.save_checkpoint(path, net, stats)
    spec, loaded_stats, tensors = dataio.load_checkpoint(path)
    assert spec == toy_spec()
    assert np.array_equal(loaded_stats[0], stats[0])
    assert np.array_equal(loaded_stats[1], stats[1])
    for name, value in net.state_items():
        assert np.array_equal(tensors[name], np.asarray(value, np.float32)), name


def test_checkpoint_save_load_save_identical(tmp_path):
    net = trained_toy_net()
    p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
    dataio.save_checkpoint(p1, net, None)
    net2, stats2 = dataio.restore_network(p1)
    assert stats2 is None
    dataio.save_checkpoint(p2, net2, None)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_restore_network_preserves_logits(tmp_path):
    net = trained_toy_net()
    path = str(tmp_path / "a.ckpt")
    dataio.save_checkpoint(path, net, None)
    restored, _ = dataio.restore_network(path)
    x = np.random.default_rng(13).normal(size=(2, 3, 16, 16)).astype(np.float32)
    a = net.forward(x.astype(np.float64))
    b = restored.forward(x)
    # the checkpoint stores float32, so compare after casting the source net
    assert np.allclose(a, b, atol=1e-4)


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(FormatError, match="magic|not a checkpoint"):
        dataio.load_checkpoint(str(path))


def test_checkpoint_rejects_truncation(tmp_path):
    net = trained_toy_net()
    path = tmp_path / "a.ckpt"
    dataio.save_checkpoint(str(path), net, None)
    path.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(FormatError):
        dataio.load_checkpoint(str(path))


def test_load_state_wrong_spec(tmp_path):
    net = trained_toy_net()
    path = str(tmp_path / "a.ckpt")
    dataio.save_checkpoint(path, net, None)
    _, _, tensors = dataio.load_checkpoint(path)
    other = build_network(toy_spec(reuse_count=4))
    with pytest.raises(FormatError, match="block1"):
        dataio.load_state(other, tensors)
