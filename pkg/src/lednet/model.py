"""Network builders: SS-nbt residual units, downsampling units, the dilated
encoder, the attention pyramid decoder, and whole-network assembly.

Also provides analytic parameter/MAC accounting and the residual-module
cost comparison (bottleneck, non-bottleneck-1D, shuffle unit, SS-nbt).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .ops import ConvParams, RunningStats
from .tensor import ShapeError, Tensor, derive_seed, normal, ones, zeros

# Dilation rates of the eight stage-3 SS-nbt units, in order.
DILATION_SCHEDULE = (1, 2, 5, 9, 2, 5, 9, 17)


class Module:
    """Named composite of parameters and child modules."""

    def __init__(self, name):
        self.name = name

    def named_parameters(self):
        params = {}
        for key, value in vars(self).items():
            if isinstance(value, Tensor):
                params[f"{self.name}.{key}"] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        params.update(item.named_parameters())
        return params

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def param_count(self):
        return sum(p.size for p in self.named_parameters().values())


@dataclass
class CostRow:
    name: str
    params: int
    macs: int
    pointwise_macs: int = 0


@dataclass
class CostReport:
    rows: list

    @property
    def total_params(self):
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self):
        return sum(r.macs for r in self.rows)

    @property
    def pointwise_macs(self):
        return sum(r.pointwise_macs for r in self.rows)


class Conv2d(Module):
    def __init__(self, name, cin, cout, kernel, stride=(1, 1), padding=(0, 0),
                 dilation=(1, 1), bias=True, seed=0):
        super().__init__(name)
        self.p = ConvParams(cin, cout, tuple(kernel), tuple(stride),
                            tuple(padding), tuple(dilation), bias)
        std = math.sqrt(2.0 / (cin * kernel[0] * kernel[1]))
        self.weight = normal(self.p.weight_shape, derive_seed(seed, f"{name}.weight"),
                             0.0, std, requires_grad=True)
        self.bias = zeros((cout,), requires_grad=True) if bias else None

    def forward(self, x, training=False):
        return ops.conv2d(x, self.weight, self.bias, self.p)

    def out_hw(self, h, w):
        return self.p.out_hw(h, w)

    def cost_rows(self, h, w):
        ho, wo = self.p.out_hw(h, w)
        kh, kw = self.p.kernel
        macs = ho * wo * self.p.out_channels * self.p.in_channels * kh * kw
        pw = macs if (kh, kw) == (1, 1) else 0
        return [CostRow(self.name, self.param_count(), macs, pw)], (ho, wo)


class BatchNorm2d(Module):
    # eps chosen for stability at tiny batch sizes
    EPS = 1e-3

    def __init__(self, name, channels):
        super().__init__(name)
        self.gamma = ones((channels,), requires_grad=True)
        self.beta = zeros((channels,), requires_grad=True)
        self.stats = RunningStats(channels)
        self.momentum = 0.1

    def forward(self, x, training=False):
        return ops.batchnorm2d(x, self.gamma, self.beta, self.stats, training,
                               eps=self.EPS, momentum=self.momentum)

    def cost_rows(self, h, w):
        return [CostRow(self.name, self.param_count(), 0)], (h, w)


class SSnbt(Module):
    """Split-shuffle non-bottleneck residual unit.

    split -> two mirrored 1D-factorized branches -> concat -> add identity
    -> relu -> channel shuffle (two groups).  Branch convs run at half
    width; the second 1D pair of each branch uses the unit's dilation.
    """

    def __init__(self, name, channels, dilation=1, seed=0):
        super().__init__(name)
        if channels % 2:
            raise ShapeError(f"SS-nbt needs even channel count, got {channels}")
        self.channels = channels
        self.dilation = dilation
        half = channels // 2
        d = dilation

        def conv(tag, kernel, pad, dil):
            return Conv2d(f"{name}.{tag}", half, half, kernel, padding=pad,
                          dilation=dil, bias=False, seed=seed)

        # branch a: 3x1, 1x3, then the dilated 3x1, 1x3 pair
        self.a0 = conv("a0", (3, 1), (1, 0), (1, 1))
        self.a1 = conv("a1", (1, 3), (0, 1), (1, 1))
        self.abn1 = BatchNorm2d(f"{name}.abn1", half)
        self.a2 = conv("a2", (3, 1), (d, 0), (d, 1))
        self.a3 = conv("a3", (1, 3), (0, d), (1, d))
        self.abn3 = BatchNorm2d(f"{name}.abn3", half)
        # branch b mirrors the 1D order
        self.b0 = conv("b0", (1, 3), (0, 1), (1, 1))
        self.b1 = conv("b1", (3, 1), (1, 0), (1, 1))
        self.bbn1 = BatchNorm2d(f"{name}.bbn1", half)
        self.b2 = conv("b2", (1, 3), (0, d), (1, d))
        self.b3 = conv("b3", (3, 1), (d, 0), (d, 1))
        self.bbn3 = BatchNorm2d(f"{name}.bbn3", half)

    def transform_convs(self):
        """Conv layers on the residual transform path (for structure checks)."""
        return [self.a0, self.a1, self.a2, self.a3,
                self.b0, self.b1, self.b2, self.b3]

    def forward(self, x, training=False):
        a, b = ops.channel_split(x)
        a = ops.relu(self.a0.forward(a, training))
        a = self.abn1.forward(self.a1.forward(a, training), training)
        a = ops.relu(a)
        a = ops.relu(self.a2.forward(a, training))
        a = self.abn3.forward(self.a3.forward(a, training), training)
        b = ops.relu(self.b0.forward(b, training))
        b = self.bbn1.forward(self.b1.forward(b, training), training)
        b = ops.relu(b)
        b = ops.relu(self.b2.forward(b, training))
        b = self.bbn3.forward(self.b3.forward(b, training), training)
        merged = ops.channel_concat(a, b)
        out = ops.relu(merged + x)
        return ops.channel_shuffle(out, 2)

    def cost_rows(self, h, w):
        rows = []
        for layer in self.transform_convs() + [self.abn1, self.abn3, self.bbn1, self.bbn3]:
            r, _ = layer.cost_rows(h, w)
            rows.extend(r)
        return rows, (h, w)


class Downsampler(Module):
    """Stride-2 3x3 conv stacked with 2x2 max pooling, then BN + relu."""

    def __init__(self, name, cin, cout, seed=0):
        super().__init__(name)
        if cout <= cin:
            raise ShapeError(f"downsampler needs cout > cin, got {cin}->{cout}")
        self.conv = Conv2d(f"{name}.conv", cin, cout - cin, (3, 3), stride=(2, 2),
                           padding=(1, 1), bias=False, seed=seed)
        self.bn = BatchNorm2d(f"{name}.bn", cout)

    def forward(self, x, training=False):
        y = ops.channel_concat(self.conv.forward(x, training), ops.maxpool2d(x))
        return ops.relu(self.bn.forward(y, training))

    def cost_rows(self, h, w):
        rows, (ho, wo) = self.conv.cost_rows(h, w)
        rows.extend(self.bn.cost_rows(ho, wo)[0])
        return rows, (ho, wo)


class Encoder(Module):
    def __init__(self, name, seed=0, dilations=DILATION_SCHEDULE):
        super().__init__(name)
        self.down1 = Downsampler(f"{name}.down1", 3, 32, seed)
        self.stage1 = [SSnbt(f"{name}.stage1.{i}", 32, 1, seed) for i in range(3)]
        self.down2 = Downsampler(f"{name}.down2", 32, 64, seed)
        self.stage2 = [SSnbt(f"{name}.stage2.{i}", 64, 1, seed) for i in range(2)]
        self.down3 = Downsampler(f"{name}.down3", 64, 128, seed)
        self.stage3 = [SSnbt(f"{name}.stage3.{i}", 128, r, seed)
                       for i, r in enumerate(dilations)]

    def units(self):
        return [self.down1, *self.stage1, self.down2, *self.stage2,
                self.down3, *self.stage3]

    def forward(self, x, training=False):
        for unit in self.units():
            x = unit.forward(x, training)
        return x

    def cost_rows(self, h, w):
        rows = []
        for unit in self.units():
            r, (h, w) = unit.cost_rows(h, w)
            rows.extend(r)
        return rows, (h, w)


class _ConvBN(Module):
    def __init__(self, name, cin, cout, kernel, stride, padding, seed):
        super().__init__(name)
        self.conv = Conv2d(f"{name}.conv", cin, cout, kernel, stride=stride,
                           padding=padding, bias=False, seed=seed)
        self.bn = BatchNorm2d(f"{name}.bn", cout)

    def forward(self, x, training=False):
        return ops.relu(self.bn.forward(self.conv.forward(x, training), training))

    def cost_rows(self, h, w):
        rows, hw = self.conv.cost_rows(h, w)
        rows.extend(self.bn.cost_rows(*hw)[0])
        return rows, hw


class APN(Module):
    """Attention pyramid decoder.

    A 7x7/5x5/3x3 stride-2 pyramid produces pixel-wise attention which is
    multiplied into a 1x1-conv trunk; a global-average-pooling branch adds
    a per-channel context term.  Output has `num_classes` channels at the
    encoder's resolution.
    """

    def __init__(self, name, cin, num_classes, seed=0):
        super().__init__(name)
        c = num_classes
        self.pyr1 = _ConvBN(f"{name}.pyr1", cin, c, (7, 7), (2, 2), (3, 3), seed)
        self.pyr2 = _ConvBN(f"{name}.pyr2", c, c, (5, 5), (2, 2), (2, 2), seed)
        self.pyr3 = _ConvBN(f"{name}.pyr3", c, c, (3, 3), (2, 2), (1, 1), seed)
        self.trunk = Conv2d(f"{name}.trunk", cin, c, (1, 1), bias=True, seed=seed)
        self.pool = Conv2d(f"{name}.pool", cin, c, (1, 1), bias=True, seed=seed)

    def forward(self, x, training=False):
        h, w = x.shape[2:]
        if h % 8 or w % 8:
            raise ShapeError(f"APN input extents must be divisible by 8, got {h}x{w}")
        f1 = self.pyr1.forward(x, training)
        f2 = self.pyr2.forward(f1, training)
        f3 = self.pyr3.forward(f2, training)
        fused = ops.upsample_bilinear(f3, 2) + f2
        fused = ops.upsample_bilinear(fused, 2) + f1
        attention = ops.upsample_bilinear(fused, 2)
        out = self.trunk.forward(x, training) * attention
        context = self.pool.forward(ops.global_avg_pool(x), training)
        return out + context

    def cost_rows(self, h, w):
        if h % 8 or w % 8:
            raise ShapeError(f"APN input extents must be divisible by 8, got {h}x{w}")
        rows = []
        hw = (h, w)
        for m in (self.pyr1, self.pyr2, self.pyr3):
            r, hw = m.cost_rows(*hw)
            rows.extend(r)
        rows.extend(self.trunk.cost_rows(h, w)[0])
        rows.extend(self.pool.cost_rows(1, 1)[0])
        return rows, (h, w)


class LEDNet(Module):
    def __init__(self, num_classes, seed=0, name="lednet"):
        super().__init__(name)
        self.num_classes = num_classes
        self.seed = seed
        self.encoder = Encoder(f"{name}.encoder", seed)
        self.apn = APN(f"{name}.apn", 128, num_classes, seed)

    def forward(self, x, training=False):
        h, w = x.shape[2:]
        if h % 8 or w % 8:
            raise ShapeError(f"input extents must be divisible by 8, got {h}x{w}")
        feats = self.encoder.forward(x, training)
        logits = self.apn.forward(feats, training)
        return ops.upsample_bilinear(logits, 8)

    def shape_trace(self, h, w):
        """Analytic (stage label, (C, H, W)) list matching the forward pass."""
        if h % 8 or w % 8:
            raise ShapeError(f"input extents must be divisible by 8, got {h}x{w}")
        c = self.num_classes
        trace = []
        ch, cw = h, w
        for unit in self.encoder.units():
            if isinstance(unit, Downsampler):
                ch, cw = ch // 2, cw // 2
                width = unit.bn.gamma.shape[0]
                trace.append(("Downsampling Unit", (width, ch, cw)))
            else:
                # the Table-1 plan annotates dilation on the stage-3 rows
                if unit.channels == 128:
                    label = f"SS-nbt Unit (dilated r={unit.dilation})"
                else:
                    label = "SS-nbt Unit"
                trace.append((label, (unit.channels, ch, cw)))
        trace.append(("APN Module", (c, ch, cw)))
        trace.append(("Upsampling Unit (x8)", (c, ch * 8, cw * 8)))
        return trace


def build_lednet(num_classes, h, w, seed=0):
    """Build the full network and verify it accepts h x w inputs."""
    if h % 8 or w % 8:
        raise ShapeError(f"input extents must be divisible by 8, got {h}x{w}")
    net = LEDNet(num_classes, seed=seed)
    net.shape_trace(h, w)
    return net


# Reference shape plan at 512x1024 input, stored C,H,W (the published
# layout table prints W x H x C).
TABLE1_TRACE = (
    [("Downsampling Unit", (32, 256, 512))]
    + [("SS-nbt Unit", (32, 256, 512))] * 3
    + [("Downsampling Unit", (64, 128, 256))]
    + [("SS-nbt Unit", (64, 128, 256))] * 2
    + [("Downsampling Unit", (128, 64, 128))]
    + [(f"SS-nbt Unit (dilated r={r})", (128, 64, 128)) for r in DILATION_SCHEDULE]
)


def check_table1(net, num_classes=20):
    """Compare the 512x1024 shape trace against the built-in Table-1 plan.

    Returns a list of mismatch strings; empty means conformant.
    """
    trace = net.shape_trace(512, 1024)
    expected = list(TABLE1_TRACE)
    expected.append(("APN Module", (num_classes, 64, 128)))
    expected.append(("Upsampling Unit (x8)", (num_classes, 512, 1024)))
    mismatches = []
    if len(trace) != len(expected):
        mismatches.append(f"stage count {len(trace)} != {len(expected)}")
    for i, (got, want) in enumerate(zip(trace, expected)):
        if got != want:
            mismatches.append(f"stage {i}: got {got}, expected {want}")
    return mismatches


def count_params(net, h, w):
    """Per-layer and total parameter/MAC report at the given input size."""
    rows, hw = net.encoder.cost_rows(h, w)
    apn_rows, _ = net.apn.cost_rows(*hw)
    return CostReport(rows + apn_rows)


def count_macs(net, h, w):
    return count_params(net, h, w)


def _conv_cost(cin, cout, kh, kw, h, w, groups=1):
    params = cout * cin * kh * kw // groups
    macs = h * w * cout * cin * kh * kw // groups
    return params, macs


def compare_modules(channels, h, w):
    """Analytic cost table for the four residual-module variants.

    Canonical instantiations, all shape-preserving at (channels, h, w) and
    bias-free, BN parameters excluded:
      - bottleneck: 1x1 down to channels/4, 3x3, 1x1 back up
      - non-bt-1D: two 3x1 + 1x3 pairs at full width
      - shuffle unit: grouped (g=2) 1x1 down to channels/4, 3x3 depthwise,
        grouped 1x1 back up
      - SS-nbt: as built by this package (eight half-width 1D convs)
    """
    c = channels
    if c % 4:
        raise ShapeError(f"channels must be divisible by 4, got {c}")
    table = {}

    mid = c // 4
    parts = [_conv_cost(c, mid, 1, 1, h, w), _conv_cost(mid, mid, 3, 3, h, w),
             _conv_cost(mid, c, 1, 1, h, w)]
    pw = parts[0][1] + parts[2][1]
    table["bottleneck"] = CostRow("bottleneck", sum(p for p, _ in parts),
                                  sum(m for _, m in parts), pw)

    parts = [_conv_cost(c, c, 3, 1, h, w), _conv_cost(c, c, 1, 3, h, w)] * 2
    table["non-bt-1D"] = CostRow("non-bt-1D", sum(p for p, _ in parts),
                                 sum(m for _, m in parts), 0)

    parts = [_conv_cost(c, mid, 1, 1, h, w, groups=2),
             _conv_cost(mid, mid, 3, 3, h, w, groups=mid),
             _conv_cost(mid, c, 1, 1, h, w, groups=2)]
    pw = parts[0][1] + parts[2][1]
    table["shuffle-unit"] = CostRow("shuffle-unit", sum(p for p, _ in parts),
                                    sum(m for _, m in parts), pw)

    half = c // 2
    parts = [_conv_cost(half, half, 3, 1, h, w), _conv_cost(half, half, 1, 3, h, w)] * 4
    table["SS-nbt"] = CostRow("SS-nbt", sum(p for p, _ in parts),
                              sum(m for _, m in parts), 0)
    return table
