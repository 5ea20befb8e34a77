"""Network assembly: reuse blocks, the full architecture, and its parameters.

A network is a stem convolution, four stages of one block applied
reuse_count times each, and a two-convolution classifier head.  Block
convolutions are shared across all applications of that block (or
replicated per application in unrolled mode), while every application
owns its own pair of batch-norm layers.  The half-swap channel shuffle
sits at the end of every block application except the last one per block.

Training-mode forward passes record a tape of backward closures; calling
`backward` walks the tape in reverse and accumulates parameter gradients
into the ParamStore.  Shared convolutions therefore receive the sum of
the gradient contributions from all of their application sites.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError, StateError
from .ops import BNState, ConvWeights
from .tensor import check_tensor4, concat_channels, elementwise_add

# Filter counts before width scaling.  Stage widths are chained by the
# self-concats (each doubling carries into the next stage), so only the
# first stage width and the head width are free parameters.
BASE_STAGE1_WIDTH = 64
BASE_HEAD_WIDTH = 256
PW_GROUPS = 8

# Per stage: trailing 3x3/s2 max pool, trailing self-concat.
STAGE_POOLED = (True, True, False, True)
STAGE_CONCAT = (True, True, True, False)

MIN_INPUT_EXTENT = 16


def scale_width(base: int, alpha: float) -> int:
    """Scale a filter count, rounding to the nearest multiple of 8 (at least 8)."""
    return max(8, int(round(base * alpha / 8.0)) * 8)


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative description of one network configuration.

    `reuse_count` is how many times each block is applied; `width_multiplier`
    scales all filter counts; `reuse_mode` selects shared convolution
    weights ("shared") or fresh weights per application ("unrolled").
    Instances are validated on construction and are immutable.
    """

    reuse_count: int
    width_multiplier: float = 1.0
    num_classes: int = 10
    input_shape: tuple = (3, 32, 32)
    reuse_mode: str = "shared"
    dropout_rate: float = 0.5
    shuffle_groups: int = 8

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if not isinstance(self.reuse_count, (int, np.integer)) or self.reuse_count < 1:
            raise ConfigError(f"reuse_count must be a positive integer, got {self.reuse_count!r}")
        if not np.isfinite(self.width_multiplier) or self.width_multiplier <= 0:
            raise ConfigError(f"width_multiplier must be positive, got {self.width_multiplier!r}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be at least 2, got {self.num_classes}")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (channels, height, width), got {self.input_shape}")
        if min(self.input_shape[1:]) < MIN_INPUT_EXTENT:
            raise ConfigError(
                f"input spatial extents must be >= {MIN_INPUT_EXTENT} "
                f"so the pooling chain stays valid, got {self.input_shape[1:]}"
            )
        if self.reuse_mode not in ("shared", "unrolled"):
            raise ConfigError(f"reuse_mode must be 'shared' or 'unrolled', got {self.reuse_mode!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.shuffle_groups < 1:
            raise ConfigError(f"shuffle_groups must be positive, got {self.shuffle_groups}")
        w = self.stage_widths()[0]
        for div, why in ((2, "the half-swap shuffle"), (self.shuffle_groups, "the shuffle groups"),
                        (PW_GROUPS, "the grouped pointwise convolutions")):
            if w % div != 0:
                raise ConfigError(f"scaled width {w} is not divisible by {div} ({why})")

    def stage_widths(self) -> tuple:
        """Block widths of the four stages; each self-concat doubles into the next."""
        w = scale_width(BASE_STAGE1_WIDTH, self.width_multiplier)
        return (w, 2 * w, 4 * w, 8 * w)

    def head_width(self) -> int:
        return scale_width(BASE_HEAD_WIDTH, self.width_multiplier)

    @property
    def name(self) -> str:
        """Configuration name, e.g. '14-LruNet-1x'."""
        return f"{self.reuse_count}-LruNet-{self.width_multiplier:g}x"

    def to_dict(self) -> dict:
        return {
            "reuse_count": self.reuse_count,
            "width_multiplier": self.width_multiplier,
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
            "reuse_mode": self.reuse_mode,
            "dropout_rate": self.dropout_rate,
            "shuffle_groups": self.shuffle_groups,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            reuse_count=int(d["reuse_count"]),
            width_multiplier=float(d["width_multiplier"]),
            num_classes=int(d["num_classes"]),
            input_shape=tuple(d["input_shape"]),
            reuse_mode=str(d["reuse_mode"]),
            dropout_rate=float(d["dropout_rate"]),
            shuffle_groups=int(d["shuffle_groups"]),
        )


class Param:
    """One named parameter tensor with paired gradient and momentum buffers."""

    __slots__ = ("name", "value", "grad", "momentum")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.momentum = np.zeros_like(value)


class ParamStore:
    """Ordered name -> Param map; the single owner of all trainable state.

    Iteration yields parameters in construction order, which is also the
    checkpoint order.  `grads_populated` flips to True after a backward
    pass and back to False when gradients are zeroed.
    """

    def __init__(self):
        self._params: dict = {}
        self.grads_populated = False

    def add(self, name: str, value: np.ndarray) -> Param:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        p = Param(name, value)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def zero_grads(self):
        for p in self:
            p.grad[...] = 0.0
        self.grads_populated = False

    def total_size(self) -> int:
        return sum(p.value.size for p in self)


@dataclass
class ConvUnit:
    weights: ConvWeights
    param: Param


@dataclass
class BNUnit:
    state: BNState
    gamma: Param
    beta: Param


@dataclass
class Block:
    """One stage's block: conv weights plus per-application batch norms."""

    index: int
    width: int
    reuse_count: int
    groups: int
    dw: list
    pw: list
    bn1: list
    bn2: list

    def convs(self, reuse_index: int):
        """The (depthwise, pointwise) units active at a given application."""
        if len(self.dw) == 1:
            return self.dw[0], self.pw[0]
        return self.dw[reuse_index], self.pw[reuse_index]


def apply_block(block: Block, reuse_index: int, x: np.ndarray, train: bool, tape):
    """Run one application of a block; append its backward closure to the tape.

    The shuffle is applied after every application except the last one
    (reuse_index == reuse_count - 1).
    """
    if not 0 <= reuse_index < block.reuse_count:
        raise ConfigError(
            f"reuse_index {reuse_index} out of range for {block.reuse_count} applications"
        )
    if x.shape[1] != block.width:
        raise ShapeError(f"block expects {block.width} channels, got {x.shape[1]}")
    dw, pw = block.convs(reuse_index)
    bn1, bn2 = block.bn1[reuse_index], block.bn2[reuse_index]

    h1, c_dw = ops.depthwise_conv_forward(x, dw.weights)
    h2, c_b1 = ops.batchnorm_forward(h1, bn1.state, train)
    h3, c_pw = ops.pointwise_group_conv_forward(h2, pw.weights)
    h4, c_b2 = ops.batchnorm_forward(h3, bn2.state, train)
    s = elementwise_add(h4, x)
    y, mask = ops.relu_forward(s)
    shuffled = reuse_index != block.reuse_count - 1
    out = ops.channel_shuffle_halfswap(y, block.groups) if shuffled else y

    if tape is not None:
        def back(dy):
            if shuffled:
                dy = ops.channel_shuffle_backward(dy, block.groups)
            ds = ops.relu_backward(dy, mask)
            # ds reaches both the residual path and the shortcut input.
            dh3, dg2, db2 = ops.batchnorm_backward(ds, c_b2)
            bn2.gamma.grad += dg2
            bn2.beta.grad += db2
            dh2, dpk = ops.conv2d_backward(dh3, c_pw)
            pw.param.grad += dpk
            dh1, dg1, db1 = ops.batchnorm_backward(dh2, c_b1)
            bn1.gamma.grad += dg1
            bn1.beta.grad += db1
            dx, ddk = ops.conv2d_backward(dh1, c_dw)
            dw.param.grad += ddk
            return dx + ds

        tape.append(back)
    return out


def lru_block_forward(x: np.ndarray, block: Block, reuse_index: int,
                      train: bool = False) -> np.ndarray:
    """Standalone single-application forward, outside a full network pass."""
    return apply_block(block, reuse_index, check_tensor4(x), train, None)


class LruNet:
    """The executable network: parameters, layer graph, and autodiff tape."""

    def __init__(self, spec: NetworkSpec, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        self.store = ParamStore()
        self._state: dict = {}
        self._bn_units: list = []
        self._tape = None

        widths = spec.stage_widths()
        in_ch = spec.input_shape[0]
        self.stem_conv = self._conv_unit("stem.conv", widths[0], in_ch, 3,
                                         groups=1, stride=2, padding=1)
        self.stem_bn = self._bn_unit("stem.bn", widths[0])

        self.blocks = []
        for b, f in enumerate(widths, start=1):
            prefix = f"block{b}"
            dw, pw, bn1, bn2 = [], [], [], []
            if spec.reuse_mode == "shared":
                dw.append(self._dw_unit(f"{prefix}.dw", f))
                pw.append(self._pw_unit(f"{prefix}.pw", f))
            for r in range(spec.reuse_count):
                if spec.reuse_mode == "unrolled":
                    dw.append(self._dw_unit(f"{prefix}.reuse{r}.dw", f))
                    pw.append(self._pw_unit(f"{prefix}.reuse{r}.pw", f))
                bn1.append(self._bn_unit(f"{prefix}.reuse{r}.bn1", 2 * f))
                bn2.append(self._bn_unit(f"{prefix}.reuse{r}.bn2", f))
            self.blocks.append(Block(b, f, spec.reuse_count, spec.shuffle_groups,
                                     dw, pw, bn1, bn2))

        head_w = spec.head_width()
        self.head_conv1 = self._conv_unit("head.conv1", head_w, widths[3] // PW_GROUPS,
                                          1, groups=PW_GROUPS, stride=1, padding=0)
        self.head_conv2 = self._conv_unit("head.conv2", spec.num_classes, head_w,
                                          1, groups=1, stride=1, padding=0)

    # -- construction helpers ------------------------------------------------

    def _conv_unit(self, prefix, out_ch, in_per_group, k, groups, stride, padding):
        kernel = np.zeros((out_ch, in_per_group, k, k), dtype=self.dtype)
        p = self.store.add(f"{prefix}.kernel", kernel)
        self._state[p.name] = kernel
        return ConvUnit(ConvWeights(kernel, groups=groups, stride=stride, padding=padding), p)

    def _dw_unit(self, prefix, f):
        return self._conv_unit(prefix, 2 * f, 1, 3, groups=f, stride=1, padding=1)

    def _pw_unit(self, prefix, f):
        return self._conv_unit(prefix, f, 2 * f // PW_GROUPS, 1,
                               groups=PW_GROUPS, stride=1, padding=0)

    def _bn_unit(self, prefix, channels):
        gamma = np.ones(channels, dtype=self.dtype)
        beta = np.zeros(channels, dtype=self.dtype)
        mean = np.zeros(channels, dtype=self.dtype)
        var = np.ones(channels, dtype=self.dtype)
        gp = self.store.add(f"{prefix}.gamma", gamma)
        bp = self.store.add(f"{prefix}.beta", beta)
        self._state[gp.name] = gamma
        self._state[bp.name] = beta
        self._state[f"{prefix}.running_mean"] = mean
        self._state[f"{prefix}.running_var"] = var
        unit = BNUnit(BNState(gamma, beta, mean, var), gp, bp)
        self._bn_units.append(unit)
        return unit

    # -- parameter lifecycle -------------------------------------------------

    def init_parameters(self, seed: int = 0):
        """He-style init for conv kernels, identity batch norms; seed-reproducible."""
        rng = np.random.default_rng(seed)
        for p in self.store:
            if p.name.endswith(".kernel"):
                fan_in = p.value.shape[1] * p.value.shape[2] * p.value.shape[3]
                p.value[...] = rng.normal(0.0, np.sqrt(2.0 / fan_in), p.value.shape)
            elif p.name.endswith(".gamma"):
                p.value[...] = 1.0
            else:
                p.value[...] = 0.0
            p.grad[...] = 0.0
            p.momentum[...] = 0.0
        for unit in self._bn_units:
            unit.state.running_mean[...] = 0.0
            unit.state.running_var[...] = 1.0
        self.store.grads_populated = False
        self._tape = None

    def state_items(self):
        """All persistent arrays (parameters and running stats) in canonical order."""
        return list(self._state.items())

    def state_dict(self) -> dict:
        return dict(self._state)

    # -- execution -----------------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator = None, record: list = None) -> np.ndarray:
        """Run the network; returns (batch, num_classes) logits.

        In train mode the pass caches a backward tape, updates batch-norm
        running statistics, and applies dropout (which needs `rng` if the
        rate is nonzero).  `record`, if given, collects (layer name, output
        shape) pairs for every layer.
        """
        x = check_tensor4(x)
        if x.shape[1:] != self.spec.input_shape:
            raise ShapeError(
                f"network expects input {self.spec.input_shape}, got {x.shape[1:]}"
            )
        x = np.ascontiguousarray(x, dtype=self.dtype)
        tape = [] if train else None

        def note(name, t):
            if record is not None:
                record.append((name, tuple(t.shape)))

        note("input", x)
        x = self._run_conv(self.stem_conv, x, tape)
        note("stem.conv", x)
        x = self._run_bn(self.stem_bn, x, train, tape)
        note("stem.bn", x)
        x = self._run_relu(x, tape)
        note("stem.relu", x)

        for stage, block in enumerate(self.blocks, start=1):
            for r in range(self.spec.reuse_count):
                x = apply_block(block, r, x, train, tape)
                note(f"stage{stage}.reuse{r}", x)
            if STAGE_POOLED[stage - 1]:
                x = self._run_maxpool(x, tape)
                note(f"stage{stage}.maxpool", x)
            if STAGE_CONCAT[stage - 1]:
                x = self._run_concat_self(x, tape)
                note(f"stage{stage}.concat", x)

        x = self._run_conv(self.head_conv1, x, tape)
        note("head.conv1", x)
        x = self._run_relu(x, tape)
        note("head.relu", x)
        x = self._run_dropout(x, train, rng, tape)
        note("head.dropout", x)
        x = self._run_conv(self.head_conv2, x, tape)
        note("head.conv2", x)
        logits = self._run_avgpool(x, tape)
        note("head.avgpool", logits)

        if train:
            self._tape = tape
        return logits

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        """Walk the cached tape in reverse; leaves gradients in the store."""
        if self._tape is None:
            raise StateError("backward requires a train-mode forward pass first")
        self.store.zero_grads()
        g = np.ascontiguousarray(dlogits, dtype=self.dtype)
        for back in reversed(self._tape):
            g = back(g)
        self._tape = None
        self.store.grads_populated = True
        return g

    # -- per-op tape wrappers ------------------------------------------------

    def _run_conv(self, unit: ConvUnit, x, tape):
        y, cache = ops.conv2d_forward(x, unit.weights)
        if tape is not None:
            def back(dy):
                dx, dk = ops.conv2d_backward(dy, cache)
                unit.param.grad += dk
                return dx

            tape.append(back)
        return y

    def _run_bn(self, unit: BNUnit, x, train, tape):
        y, cache = ops.batchnorm_forward(x, unit.state, train)
        if tape is not None:
            def back(dy):
                dx, dg, db = ops.batchnorm_backward(dy, cache)
                unit.gamma.grad += dg
                unit.beta.grad += db
                return dx

            tape.append(back)
        return y

    def _run_relu(self, x, tape):
        y, mask = ops.relu_forward(x)
        if tape is not None:
            tape.append(lambda dy: ops.relu_backward(dy, mask))
        return y

    def _run_maxpool(self, x, tape):
        y, cache = ops.maxpool_forward(x)
        if tape is not None:
            tape.append(lambda dy: ops.maxpool_backward(dy, cache))
        return y

    def _run_concat_self(self, x, tape):
        y = concat_channels(x, x)
        c = x.shape[1]
        if tape is not None:
            tape.append(lambda dy: dy[:, :c] + dy[:, c:])
        return y

    def _run_dropout(self, x, train, rng, tape):
        y, cache = ops.dropout_forward(x, self.spec.dropout_rate, train, rng)
        if tape is not None:
            tape.append(lambda dy: ops.dropout_backward(dy, cache))
        return y

    def _run_avgpool(self, x, tape):
        y, cache = ops.global_avgpool_forward(x)
        if tape is not None:
            tape.append(lambda dy: ops.global_avgpool_backward(dy, cache))
        return y


def build_network(spec: NetworkSpec, dtype=np.float32) -> LruNet:
    """Construct an uninitialized network for a validated spec."""
    return LruNet(spec, dtype=dtype)
