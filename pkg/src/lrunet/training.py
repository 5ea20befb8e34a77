"""SGD training loop: optimizer, schedule, augmentation, evaluation.

The driver is fully deterministic given TrainConfig.seed: parameter
init, epoch shuffling, augmentation draws and dropout masks all come
from generators derived from that one seed, so two runs with the same
config produce bit-identical parameter trajectories.
"""

import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StateError
from .network import LruNet, NetworkSpec, ParamStore, build_network
from .ops import softmax_cross_entropy

DEFAULT_SCHEDULE = ((200, 0.1), (50, 0.01), (50, 0.001))


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    lr_schedule is a sequence of (epochs, learning_rate) phases run in
    order.  Weight decay applies to every parameter, batch-norm scale and
    shift included.
    """

    batch_size: int = 256
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_schedule: tuple = DEFAULT_SCHEDULE
    seed: int = 0
    crop_padding: int = 4
    rotation_degrees: float = 10.0
    hflip: bool = True
    augment: bool = True
    max_steps: int = 0  # 0 = no step cap
    early_stop_train_acc: float = 0.0  # 0 = never

    def __post_init__(self):
        object.__setattr__(self, "lr_schedule",
                           tuple((int(e), float(lr)) for e, lr in self.lr_schedule))
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2 for batch norm, got {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not self.lr_schedule:
            raise ConfigError("lr_schedule must have at least one phase")
        for e, lr in self.lr_schedule:
            if e < 1 or lr <= 0:
                raise ConfigError(f"bad schedule phase ({e}, {lr}): need epochs >= 1, lr > 0")
        if self.crop_padding < 0 or self.rotation_degrees < 0:
            raise ConfigError("augmentation magnitudes must be >= 0")

    @property
    def total_epochs(self) -> int:
        return sum(e for e, _ in self.lr_schedule)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch index."""
        done = 0
        for e, lr in self.lr_schedule:
            done += e
            if epoch <= done:
                return lr
        return self.lr_schedule[-1][1]


@dataclass
class Metrics:
    """One epoch's record."""

    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    lr: float
    seconds: float

    def record(self) -> str:
        return (f"epoch={self.epoch} train_loss={self.train_loss:.6f} "
                f"train_acc={self.train_acc:.6f} val_acc={self.val_acc:.6f} "
                f"lr={self.lr:g} seconds={self.seconds:.3f}")


def sgd_step(store: ParamStore, lr: float, momentum: float = 0.9,
             weight_decay: float = 5e-4):
    """One momentum-SGD update over every parameter in the store.

    g <- grad + weight_decay * w;  v <- momentum * v + g;  w <- w - lr * v.
    Gradients are zeroed afterwards, so each step consumes one backward pass.
    """
    if not store.grads_populated:
        raise StateError("sgd_step requires gradients from a backward pass")
    for p in store:
        g = p.grad
        if weight_decay:
            g = g + weight_decay * p.value
        p.momentum *= momentum
        p.momentum += g
        p.value -= lr * p.momentum
    store.zero_grads()


# ---------------------------------------------------------------------------
# augmentation


def rotate_bilinear(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate a (C, H, W) image about its center; out-of-bounds reads are 0."""
    c, h, w = img.shape
    theta = np.deg2rad(degrees)
    cos, sin = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    sy = cos * (yy - cy) - sin * (xx - cx) + cy
    sx = sin * (yy - cy) + cos * (xx - cx) + cx
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    wy = (sy - y0).astype(img.dtype)
    wx = (sx - x0).astype(img.dtype)
    out = np.zeros_like(img)
    for dy, dx, wgt in ((0, 0, (1 - wy) * (1 - wx)), (0, 1, (1 - wy) * wx),
                        (1, 0, wy * (1 - wx)), (1, 1, wy * wx)):
        yi, xi = y0 + dy, x0 + dx
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        sample = img[:, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        out += sample * (wgt * valid)
    return out


def augment(img: np.ndarray, rng: np.random.Generator, crop_padding: int = 4,
            rotation_degrees: float = 10.0, hflip: bool = True) -> np.ndarray:
    """Randomly transform one (C, H, W) image: pad+crop, flip, then rotate.

    The crop pads `crop_padding` zeros on every side and cuts a random
    H x W window; the flip is horizontal with probability 0.5; the
    rotation angle is uniform in [-rotation_degrees, +rotation_degrees]
    with bilinear resampling.
    """
    c, h, w = img.shape
    if crop_padding > 0:
        p = crop_padding
        padded = np.pad(img, ((0, 0), (p, p), (p, p)))
        i = int(rng.integers(0, 2 * p + 1))
        j = int(rng.integers(0, 2 * p + 1))
        img = padded[:, i : i + h, j : j + w]
    if hflip and rng.random() < 0.5:
        img = img[:, :, ::-1]
    if rotation_degrees > 0:
        img = rotate_bilinear(np.ascontiguousarray(img),
                              float(rng.uniform(-rotation_degrees, rotation_degrees)))
    return np.ascontiguousarray(img)


def augment_batch(batch: np.ndarray, rng, cfg: TrainConfig) -> np.ndarray:
    out = np.empty_like(batch)
    for i in range(batch.shape[0]):
        out[i] = augment(batch[i], rng, cfg.crop_padding, cfg.rotation_degrees, cfg.hflip)
    return out


# ---------------------------------------------------------------------------
# normalization


def prepare_images(images: np.ndarray) -> np.ndarray:
    """Promote images to float32; byte images are scaled to [0, 1]."""
    if images.dtype == np.uint8:
        return images.astype(np.float32) / 255.0
    return images.astype(np.float32, copy=False)


def channel_stats(images: np.ndarray):
    """Per-channel mean and std of a prepared (N, C, H, W) array."""
    x = prepare_images(images)
    mean = x.mean(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)
    std = x.std(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)
    std[std < 1e-8] = 1.0  # constant channels pass through centered
    return mean, std


def normalize(images: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    x = prepare_images(images)
    return (x - mean.reshape(1, -1, 1, 1)) / std.reshape(1, -1, 1, 1)


# ---------------------------------------------------------------------------
# driver


def evaluate(net: LruNet, images: np.ndarray, labels: np.ndarray,
             norm_stats, batch_size: int = 256) -> float:
    """Top-1 accuracy in eval mode (running BN stats, no dropout)."""
    mean, std = norm_stats
    n = len(images)
    if n == 0:
        raise ConfigError("cannot evaluate on an empty split")
    correct = 0
    for start in range(0, n, batch_size):
        x = normalize(images[start : start + batch_size], mean, std)
        logits = net.forward(x, train=False)
        correct += int((logits.argmax(axis=1) == labels[start : start + batch_size]).sum())
    return correct / n


def train(spec: NetworkSpec, cfg: TrainConfig, train_images, train_labels,
          val_images=None, val_labels=None, metrics_path=None,
          checkpoint_dir=None, log=None):
    """Run the full schedule; returns (net, norm_stats, history).

    Metrics are appended to `metrics_path` (one key=value record per
    epoch) as they are produced; `checkpoint_dir` receives final.ckpt and
    best.ckpt (best by validation accuracy, falling back to train
    accuracy when no validation split is given).  Training batches whose
    remainder would hold a single sample are dropped, since batch norm
    cannot normalize them.
    """
    from . import dataio  # deferred: dataio imports network, not training

    train_images = np.asarray(train_images)
    train_labels = np.asarray(train_labels)
    if train_images.ndim != 4 or train_images.shape[1:] != spec.input_shape:
        raise ConfigError(
            f"training images {train_images.shape[1:]} do not match "
            f"network input {spec.input_shape}"
        )
    if len(train_images) != len(train_labels):
        raise ConfigError("image/label count mismatch")
    if len(train_images) < 2:
        raise ConfigError("need at least 2 training samples for batch norm")

    seq = np.random.SeedSequence(cfg.seed)
    shuffle_rng, augment_rng, dropout_rng = (np.random.default_rng(s) for s in seq.spawn(3))

    net = build_network(spec)
    net.init_parameters(cfg.seed)
    norm_stats = channel_stats(train_images)
    mean, std = norm_stats

    history = []
    best_acc = -1.0
    steps = 0
    stop = False
    n = len(train_images)
    batch = min(cfg.batch_size, n)

    if metrics_path is not None:
        open(metrics_path, "w").close()

    for epoch in range(1, cfg.total_epochs + 1):
        lr = cfg.lr_at(epoch)
        t0 = time.perf_counter()
        perm = shuffle_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        seen = 0
        for start in range(0, n, batch):
            idx = perm[start : start + batch]
            if len(idx) < 2:
                continue
            x = normalize(train_images[idx], mean, std)
            if cfg.augment:
                x = augment_batch(x, augment_rng, cfg)
            logits = net.forward(x, train=True, rng=dropout_rng)
            loss, dlogits = softmax_cross_entropy(logits, train_labels[idx])
            net.backward(dlogits)
            sgd_step(net.store, lr, cfg.momentum, cfg.weight_decay)
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == train_labels[idx]).sum())
            seen += len(idx)
            steps += 1
            if cfg.max_steps and steps >= cfg.max_steps:
                stop = True
                break

        train_loss = loss_sum / max(seen, 1)
        train_acc = correct / max(seen, 1)
        val_acc = 0.0
        if val_images is not None and len(val_images):
            val_acc = evaluate(net, val_images, val_labels, norm_stats, cfg.batch_size)
        m = Metrics(epoch, train_loss, train_acc, val_acc, lr, time.perf_counter() - t0)
        history.append(m)
        if metrics_path is not None:
            with open(metrics_path, "a") as fh:
                fh.write(m.record() + "\n")
        if log is not None:
            log(m.record())

        score = val_acc if val_images is not None and len(val_images) else train_acc
        if checkpoint_dir is not None and score > best_acc:
            dataio.save_checkpoint(f"{checkpoint_dir}/best.ckpt", net, norm_stats)
        best_acc = max(best_acc, score)
        if cfg.early_stop_train_acc and train_acc >= cfg.early_stop_train_acc:
            stop = True
        if stop:
            break

    if checkpoint_dir is not None:
        dataio.save_checkpoint(f"{checkpoint_dir}/final.ckpt", net, norm_stats)
    return net, norm_stats, history
