import numpy as np
import pytest

from lrunet import training
from lrunet.errors import ConfigError, StateError
from lrunet.network import ParamStore, build_network
from lrunet.training import (Metrics, TrainConfig, augment, channel_stats,
                             evaluate, normalize, rotate_bilinear, sgd_step,
                             train)

from conftest import toy_spec


def tiny_store(values, grads):
    store = ParamStore()
    for i, (v, g) in enumerate(zip(values, grads)):
        p = store.add(f"p{i}", np.array(v, dtype=np.float64))
        p.grad[:] = g
    store.grads_populated = True
    return store


# -- optimizer ---------------------------------------------------------------


def test_sgd_plain_step():
    store = tiny_store([[1.0, 2.0]], [[0.5, -1.0]])
    sgd_step(store, lr=1.0, momentum=0.0, weight_decay=0.0)
    assert np.allclose(store["p0"].value, [0.5, 3.0])


def test_sgd_weight_decay_only():
    store = tiny_store([[10.0]], [[0.0]])
    sgd_step(store, lr=0.1, momentum=0.0, weight_decay=5e-4)
    assert np.allclose(store["p0"].value, 10.0 * (1 - 0.1 * 5e-4))


def test_sgd_momentum_accumulates():
    store = tiny_store([[0.0]], [[1.0]])
    sgd_step(store, lr=1.0, momentum=0.9, weight_decay=0.0)
    assert np.allclose(store["p0"].value, -1.0)
    store["p0"].grad[:] = 1.0
    store.grads_populated = True
    sgd_step(store, lr=1.0, momentum=0.9, weight_decay=0.0)
    assert np.allclose(store["p0"].value, -1.0 - 1.9)


def test_sgd_zeroes_grads():
    store = tiny_store([[1.0]], [[1.0]])
    sgd_step(store, lr=0.1)
    assert not store.grads_populated
    assert np.all(store["p0"].grad == 0.0)
    with pytest.raises(StateError):
        sgd_step(store, lr=0.1)


def test_sgd_requires_backward():
    store = ParamStore()
    store.add("w", np.ones(3, np.float64))
    with pytest.raises(StateError):
        sgd_step(store, lr=0.1)


# -- schedule ----------------------------------------------------------------


def test_default_schedule_phases():
    cfg = TrainConfig()
    assert cfg.total_epochs == 300
    for epoch, lr in [(1, 0.1), (200, 0.1), (201, 0.01), (250, 0.01),
                      (251, 0.001), (300, 0.001), (400, 0.001)]:
        assert cfg.lr_at(epoch) == lr


def test_custom_schedule():
    cfg = TrainConfig(lr_schedule=((2, 0.5), (1, 0.05)))
    assert [cfg.lr_at(e) for e in (1, 2, 3)] == [0.5, 0.5, 0.05]


@pytest.mark.parametrize("kwargs", [
    dict(batch_size=1),
    dict(momentum=1.0),
    dict(momentum=-0.1),
    dict(weight_decay=-1e-4),
    dict(lr_schedule=()),
    dict(lr_schedule=((0, 0.1),)),
    dict(lr_schedule=((10, 0.0),)),
    dict(crop_padding=-1),
    dict(rotation_degrees=-5.0),
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


# -- augmentation ------------------------------------------------------------


def test_rotate_zero_is_identity():
    img = np.random.default_rng(0).normal(size=(3, 9, 9)).astype(np.float32)
    assert np.array_equal(rotate_bilinear(img, 0.0), img)


def test_rotate_preserves_disk_mass():
    h = 31
    yy, xx = np.mgrid[:h, :h] - (h - 1) / 2.0
    disk = ((yy ** 2 + xx ** 2) <= 8 ** 2).astype(np.float32)[None]
    for deg in (-10.0, 7.5, 10.0):
        out = rotate_bilinear(disk, deg)
        assert abs(out.sum() / disk.sum() - 1.0) < 0.03


def test_augment_identity_config():
    img = np.random.default_rng(1).normal(size=(3, 8, 8)).astype(np.float32)
    out = augment(img, np.random.default_rng(0), crop_padding=0,
                  rotation_degrees=0.0, hflip=False)
    assert np.array_equal(out, img)


def test_augment_flip_only():
    img = np.arange(2 * 4 * 4, dtype=np.float32).reshape(2, 4, 4)
    rng = np.random.default_rng(2)
    seen = set()
    for _ in range(32):
        out = augment(img, rng, crop_padding=0, rotation_degrees=0.0, hflip=True)
        if np.array_equal(out, img):
            seen.add("plain")
        elif np.array_equal(out, img[:, :, ::-1]):
            seen.add("flipped")
        else:
            pytest.fail("flip-only augment produced a third image")
    assert seen == {"plain", "flipped"}


def test_augment_crop_keeps_shape():
    img = np.random.default_rng(3).normal(size=(3, 16, 16)).astype(np.float32)
    out = augment(img, np.random.default_rng(1), crop_padding=4,
                  rotation_degrees=0.0, hflip=False)
    assert out.shape == img.shape


# -- normalization -----------------------------------------------------------


def test_channel_stats_uint8():
    images = np.zeros((2, 2, 4, 4), np.uint8)
    images[:, 1] = 255
    mean, std = channel_stats(images)
    assert np.allclose(mean, [0.0, 1.0])
    assert np.allclose(std, [1.0, 1.0])  # constant channels guard to 1


def test_normalize_standardizes():
    rng = np.random.default_rng(4)
    images = rng.integers(0, 256, size=(50, 3, 8, 8), dtype=np.uint8)
    mean, std = channel_stats(images)
    z = normalize(images, mean, std)
    assert np.abs(z.mean(axis=(0, 2, 3))).max() < 1e-3
    assert np.abs(z.std(axis=(0, 2, 3)) - 1.0).max() < 1e-3


# -- evaluation --------------------------------------------------------------


class OracleNet:
    """Stand-in network that reads the label planted in each image."""

    def forward(self, x, train=False, rng=None, record=None):
        votes = x.mean(axis=(1, 2, 3))
        logits = np.zeros((len(x), 10), np.float32)
        logits[np.arange(len(x)), np.rint(votes).astype(int) % 10] = 1.0
        return logits


def test_evaluate_perfect_oracle():
    labels = np.arange(40) % 10
    images = np.broadcast_to(labels.astype(np.float32).reshape(-1, 1, 1, 1),
                             (40, 3, 4, 4)).copy()
    stats = (np.zeros(3, np.float32), np.ones(3, np.float32))
    assert evaluate(OracleNet(), images, labels, stats, batch_size=16) == 1.0


def test_evaluate_batch_size_invariant(toy_net):
    rng = np.random.default_rng(5)
    images = rng.integers(0, 256, size=(64, 3, 16, 16), dtype=np.uint8)
    labels = rng.integers(0, 10, 64)
    stats = channel_stats(images)
    a = evaluate(toy_net, images, labels, stats, batch_size=64)
    b = evaluate(toy_net, images, labels, stats, batch_size=1)
    assert a == b


def test_evaluate_chance_level(toy_net):
    rng = np.random.default_rng(6)
    images = rng.integers(0, 256, size=(5000, 3, 16, 16), dtype=np.uint8)
    labels = rng.integers(0, 10, 5000)
    stats = channel_stats(images)
    acc = evaluate(toy_net, images, labels, stats, batch_size=500)
    assert abs(acc - 0.10) < 0.02


def test_evaluate_empty_split(toy_net):
    stats = (np.zeros(3, np.float32), np.ones(3, np.float32))
    with pytest.raises(ConfigError):
        evaluate(toy_net, np.zeros((0, 3, 16, 16), np.uint8), np.zeros(0, np.int64), stats)


# -- the driver --------------------------------------------------------------


def synthetic_set(n, seed=0, shape=(3, 16, 16)):
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(n,) + shape, dtype=np.uint8)
    labels = rng.integers(0, 10, n).astype(np.int64)
    return images, labels


def run_short(tmp_path=None, seed=3, **cfg_kwargs):
    images, labels = synthetic_set(32)
    cfg = TrainConfig(batch_size=16, lr_schedule=((2, 0.05),), seed=seed,
                      augment=False, **cfg_kwargs)
    kwargs = {}
    if tmp_path is not None:
        kwargs = dict(metrics_path=str(tmp_path / "metrics.txt"),
                      checkpoint_dir=str(tmp_path))
    return train(toy_spec(), cfg, images, labels, **kwargs)


def strip_seconds(m: Metrics) -> str:
    return m.record().rsplit(" seconds=", 1)[0]


def test_train_deterministic():
    net_a, stats_a, hist_a = run_short()
    net_b, stats_b, hist_b = run_short()
    for name in net_a.store.names():
        assert np.array_equal(net_a.store[name].value, net_b.store[name].value), name
    for ka, kb in zip(net_a.state_items(), net_b.state_items()):
        assert ka[0] == kb[0] and np.array_equal(ka[1], kb[1])
    assert [strip_seconds(m) for m in hist_a] == [strip_seconds(m) for m in hist_b]
    assert np.array_equal(stats_a[0], stats_b[0])


def test_train_seed_changes_result():
    net_a, _, _ = run_short(seed=3)
    net_b, _, _ = run_short(seed=4)
    assert not np.array_equal(net_a.store["stem.conv.kernel"].value,
                              net_b.store["stem.conv.kernel"].value)


def test_train_writes_outputs(tmp_path):
    net, stats, hist = run_short(tmp_path)
    lines = (tmp_path / "metrics.txt").read_text().splitlines()
    assert len(lines) == len(hist) == 2
    first = dict(kv.split("=", 1) for kv in lines[0].split(" "))
    assert first["epoch"] == "1"
    assert set(first) == {"epoch", "train_loss", "train_acc", "val_acc", "lr", "seconds"}
    assert (tmp_path / "final.ckpt").exists()
    assert (tmp_path / "best.ckpt").exists()


def test_train_max_steps():
    _, _, hist = run_short(max_steps=1)
    assert len(hist) == 1


def test_train_drops_single_sample_remainder():
    images, labels = synthetic_set(33)
    cfg = TrainConfig(batch_size=16, lr_schedule=((1, 0.05),), augment=False)
    net, stats, hist = train(toy_spec(), cfg, images, labels)
    assert len(hist) == 1
    assert hist[0].train_acc >= 0.0  # computed over the 32 kept samples


def test_train_validates_inputs():
    images, labels = synthetic_set(8)
    cfg = TrainConfig(batch_size=4, lr_schedule=((1, 0.1),))
    with pytest.raises(ConfigError):
        train(toy_spec(), cfg, images[:, :, :8, :8], labels)
    with pytest.raises(ConfigError):
        train(toy_spec(), cfg, images, labels[:4])
    with pytest.raises(ConfigError):
        train(toy_spec(), cfg, images[:1], labels[:1])


def test_train_uses_validation_split():
    images, labels = synthetic_set(32)
    val_images, val_labels = synthetic_set(16, seed=9)
    cfg = TrainConfig(batch_size=16, lr_schedule=((1, 0.05),), augment=False)
    _, _, hist = train(toy_spec(), cfg, images, labels, val_images, val_labels)
    assert 0.0 <= hist[0].val_acc <= 1.0


def test_metrics_record_format():
    m = Metrics(3, 1.5, 0.25, 0.5, 0.01, 12.345)
    rec = m.record()
    assert rec.startswith("epoch=3 ")
    assert "lr=0.01" in rec and "seconds=12.345" in rec
