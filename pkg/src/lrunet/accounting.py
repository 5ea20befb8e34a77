"""Closed-form parameter and FLOP accounting over a NetworkSpec.

This module re-derives the layer listing arithmetically instead of
building tensors, so its numbers can be cross-checked against the sizes
of an actually constructed parameter store.

Counting conventions, applied uniformly:
  - A convolution parameter count is out_channels * in_channels_per_group
    * kH * kW; there are no bias terms.  A batch-norm layer contributes
    2 * channels (gamma and beta); running statistics are state, not
    parameters.
  - In shared mode a block's convolution parameters are attributed to the
    first application row so that column sums equal the totals; FLOPs are
    charged at every application.
  - FLOPs are counted at batch 1 with one FLOP per multiply-accumulate
    for convolutions (params * output height * width), 2 per output
    element for batch norm, 1 per element for ReLU and for the shortcut
    add, and 0 for pooling, shuffle, dropout and concatenation.
  - Thousand-scale summaries round up to the next thousand.
"""

from dataclasses import dataclass, field

from .errors import ConfigError
from .network import NetworkSpec


@dataclass
class LayerCost:
    """Cost of one layer application."""

    name: str
    params: int
    flops: int
    output_shape: tuple


@dataclass
class CostReport:
    """Per-layer costs plus totals for one network configuration."""

    spec_name: str
    reuse_mode: str
    depth: int
    rows: list = field(default_factory=list)
    conv_params: int = 0
    bn_params: int = 0
    total_flops: int = 0

    @property
    def total_params(self) -> int:
        return self.conv_params + self.bn_params

    @property
    def mflops(self) -> float:
        """Total FLOPs in millions, two decimals."""
        return round(self.total_flops / 1e6, 2)

    def text_table(self) -> str:
        """Aligned human-readable table with a totals footer."""
        width = max(len(r.name) for r in self.rows)
        lines = [f"{self.spec_name}  ({self.reuse_mode} weights)"]
        lines.append(f"{'layer':<{width}}  {'params':>10}  {'flops':>12}  output")
        for r in self.rows:
            shape = "x".join(str(v) for v in r.output_shape)
            lines.append(f"{r.name:<{width}}  {r.params:>10,}  {r.flops:>12,}  {shape}")
        lines.append("")
        lines.append(f"depth (conv layers): {self.depth}")
        lines.append(f"conv params:  {self.conv_params:,} ({kilo(self.conv_params)}k)")
        lines.append(f"bn params:    {self.bn_params:,}")
        lines.append(f"total params: {self.total_params:,} ({kilo(self.total_params)}k)")
        lines.append(f"flops:        {self.total_flops:,} ({self.mflops:.2f} MFLOPs)")
        return "\n".join(lines)

    def records(self) -> list:
        """Machine-readable key=value lines, one per layer plus totals."""
        out = [f"name={self.spec_name}", f"reuse_mode={self.reuse_mode}"]
        for r in self.rows:
            shape = "x".join(str(v) for v in r.output_shape)
            out.append(f"layer={r.name} params={r.params} flops={r.flops} out={shape}")
        out.append(f"depth={self.depth}")
        out.append(f"conv_params={self.conv_params}")
        out.append(f"bn_params={self.bn_params}")
        out.append(f"total_params={self.total_params}")
        out.append(f"flops={self.total_flops}")
        out.append(f"mflops={self.mflops:.2f}")
        return out


def kilo(count: int) -> int:
    """Parameter count in thousands, rounded up to the next thousand."""
    return -(-count // 1000)


def depth(spec: NetworkSpec) -> int:
    """Number of convolution layers: stem + 2 per block application + head."""
    return 1 + 2 * 4 * spec.reuse_count + 2


def _pool_out(size: int) -> int:
    # 3x3 window, stride 2, padding 1, floor mode
    return (size + 2 - 3) // 2 + 1


def build_report(spec: NetworkSpec) -> CostReport:
    """Walk the layer listing once, accumulating parameter and FLOP costs."""
    if not isinstance(spec, NetworkSpec):
        raise ConfigError(f"expected a NetworkSpec, got {type(spec).__name__}")
    report = CostReport(spec.name, spec.reuse_mode, depth(spec))
    rows = report.rows

    def add_conv(name, out_ch, in_per_group, k, h, w, counted):
        p = out_ch * in_per_group * k * k
        f = p * h * w
        if counted:
            report.conv_params += p
        report.total_flops += f
        rows.append(LayerCost(name, p if counted else 0, f, (out_ch, h, w)))

    def add_bn(name, c, h, w):
        report.bn_params += 2 * c
        report.total_flops += 2 * c * h * w
        rows.append(LayerCost(name, 2 * c, 2 * c * h * w, (c, h, w)))

    def add_plain(name, shape, flops=0):
        report.total_flops += flops
        rows.append(LayerCost(name, 0, flops, shape))

    c_in, h, w = spec.input_shape
    widths = spec.stage_widths()
    n = spec.reuse_count
    unrolled = spec.reuse_mode == "unrolled"

    h1, w1 = _pool_out(h), _pool_out(w)  # stem is also 3x3/s2/p1
    add_conv("stem.conv", widths[0], c_in, 3, h1, w1, True)
    add_bn("stem.bn", widths[0], h1, w1)
    add_plain("stem.relu", (widths[0], h1, w1), widths[0] * h1 * w1)

    # Stage spatial sizes: stages 1 and 2 end in a pool, stage 3 does not.
    h2, w2 = _pool_out(h1), _pool_out(w1)
    h3, w3 = _pool_out(h2), _pool_out(w2)
    sizes = [(h1, w1), (h2, w2), (h3, w3), (h3, w3)]
    h4, w4 = _pool_out(h3), _pool_out(w3)

    for b, (fch, (hh, ww)) in enumerate(zip(widths, sizes), start=1):
        for r in range(n):
            counted = unrolled or r == 0
            prefix = f"block{b}.reuse{r}"
            add_conv(f"{prefix}.dw", 2 * fch, 1, 3, hh, ww, counted)
            add_bn(f"{prefix}.bn1", 2 * fch, hh, ww)
            add_conv(f"{prefix}.pw", fch, 2 * fch // 8, 1, hh, ww, counted)
            add_bn(f"{prefix}.bn2", fch, hh, ww)
            add_plain(f"{prefix}.add", (fch, hh, ww), fch * hh * ww)
            add_plain(f"{prefix}.relu", (fch, hh, ww), fch * hh * ww)
            if r != n - 1:
                add_plain(f"{prefix}.shuffle", (fch, hh, ww))
        if b == 1:
            add_plain("stage1.maxpool", (fch, h2, w2))
            add_plain("stage1.concat", (2 * fch, h2, w2))
        elif b == 2:
            add_plain("stage2.maxpool", (fch, h3, w3))
            add_plain("stage2.concat", (2 * fch, h3, w3))
        elif b == 3:
            add_plain("stage3.concat", (2 * fch, h3, w3))
        else:
            add_plain("stage4.maxpool", (fch, h4, w4))

    head_w = spec.head_width()
    add_conv("head.conv1", head_w, widths[3] // 8, 1, h4, w4, True)
    add_plain("head.relu", (head_w, h4, w4), head_w * h4 * w4)
    add_plain("head.dropout", (head_w, h4, w4))
    add_conv("head.conv2", spec.num_classes, head_w, 1, h4, w4, True)
    add_plain("head.avgpool", (spec.num_classes,))
    return report


def count_params(spec: NetworkSpec) -> CostReport:
    """Exact integer parameter accounting (FLOPs come along for free)."""
    return build_report(spec)


def count_flops(spec: NetworkSpec) -> CostReport:
    """FLOP accounting under the documented convention; linear in reuse_count."""
    return build_report(spec)
