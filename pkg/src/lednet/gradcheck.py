"""Finite-difference verification suite covering every network op.

Each op is checked in 64-bit mode against central differences on several
seeded random inputs; the suite reports the max relative error per op.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor, finite_difference_check, record, tsum, uniform

TOLERANCE = 1e-4

CONV_GRID = [
    # (stride, padding, dilation)
    ((1, 1), (0, 0), (1, 1)),
    ((1, 1), (1, 1), (1, 1)),
    ((2, 2), (1, 1), (1, 1)),
    ((1, 1), (2, 2), (2, 2)),
    ((2, 2), (2, 2), (2, 2)),
    ((1, 1), (2, 2), (1, 2)),
]


def _signed_input(shape, seed):
    # keep values away from relu/maxpool kinks
    x = uniform(shape, seed, 0.2, 1.0, dtype=np.float64)
    sign = uniform(shape, seed + 1, -1.0, 1.0, dtype=np.float64)
    return Tensor(np.where(sign.data > 0, x.data, -x.data))


def _corrupted_relu(x):
    out = Tensor(np.maximum(x.data, 0))

    def backward(g):
        return (g * (x.data > 0) * 1.01,)

    return record((x,), out, backward)


def run_suite(seed=0, trials=5, corrupt=None):
    """Run all checks; returns ordered list of (op name, max relative error).

    `corrupt` names an op whose backward rule is deliberately broken, as a
    negative control for the harness itself.
    """
    checks = []
    results = []

    def register(name, fn):
        checks.append((name, fn))

    shape = (1, 4, 6, 6)

    for stride, pad, dil in CONV_GRID:
        p = ops.ConvParams(3, 2, (3, 3), stride, pad, dil, True)
        tag = f"conv2d s{stride[0]}{stride[1]} p{pad[0]}{pad[1]} d{dil[0]}{dil[1]}"

        def make(p=p):
            def check(t):
                x = _signed_input((1, 3, 8, 8), 100 + 2 * t)
                w = uniform(p.weight_shape, 200 + t, -0.5, 0.5, dtype=np.float64)
                b = uniform((2,), 300 + t, -0.5, 0.5, dtype=np.float64)
                errs = [
                    finite_difference_check(lambda v: tsum(ops.conv2d(v, w, b, p)), x),
                    finite_difference_check(lambda v: tsum(ops.conv2d(x, v, b, p)), w),
                    finite_difference_check(lambda v: tsum(ops.conv2d(x, w, v, p)), b),
                ]
                return max(errs)

            return check

        register(tag, make())

    def sq(x):
        return x * x

    register("maxpool2d", lambda t: finite_difference_check(
        lambda v: tsum(sq(ops.maxpool2d(v))), _signed_input((1, 3, 6, 6), 400 + t)))

    register("global_avg_pool", lambda t: finite_difference_check(
        lambda v: tsum(sq(ops.global_avg_pool(v))), _signed_input(shape, 410 + t)))

    def bn_check(t):
        x = _signed_input((2, 3, 5, 5), 420 + 2 * t)
        gamma = uniform((3,), 430 + t, 0.5, 1.5, dtype=np.float64)
        beta = uniform((3,), 440 + t, -0.5, 0.5, dtype=np.float64)
        stats = ops.RunningStats(3, dtype=np.float64)

        def through(v, g, b, training):
            return tsum(sq(ops.batchnorm2d(v, g, b, stats, training)))

        errs = [
            finite_difference_check(lambda v: through(v, gamma, beta, True), x),
            finite_difference_check(lambda v: through(x, v, beta, True), gamma),
            finite_difference_check(lambda v: through(x, gamma, v, True), beta),
            finite_difference_check(lambda v: through(v, gamma, beta, False), x),
        ]
        return max(errs)

    register("batchnorm2d", bn_check)

    register("relu", lambda t: finite_difference_check(
        lambda v: tsum(sq(ops.relu(v))), _signed_input(shape, 450 + t)))

    register("upsample_bilinear", lambda t: finite_difference_check(
        lambda v: tsum(sq(ops.upsample_bilinear(v, 2))), _signed_input((1, 2, 4, 6), 460 + t)))

    def split_check(t):
        x = _signed_input((1, 4, 4, 4), 470 + t)

        def fn(v):
            a, b = ops.channel_split(v)
            return tsum(sq(a)) + tsum(sq(b) * Tensor(np.full_like(b.data, 2.0)))

        return finite_difference_check(fn, x)

    register("channel_split", split_check)

    def concat_check(t):
        x = _signed_input((1, 3, 4, 4), 480 + t)
        other = _signed_input((1, 2, 4, 4), 490 + t)
        return finite_difference_check(
            lambda v: tsum(sq(ops.channel_concat(v, other))), x)

    register("channel_concat", concat_check)

    register("channel_shuffle", lambda t: finite_difference_check(
        lambda v: tsum(sq(ops.channel_shuffle(v, 2))), _signed_input((1, 6, 4, 4), 500 + t)))

    def ce_check(t):
        x = _signed_input((2, 3, 4, 5), 510 + t)
        rng = np.random.default_rng(520 + t)
        labels = rng.integers(0, 3, size=(2, 4, 5))
        labels[rng.random(labels.shape) < 0.2] = 255
        if (labels != 255).sum() == 0:
            labels[0, 0, 0] = 1
        return finite_difference_check(
            lambda v: ops.softmax_cross_entropy(v, labels), x)

    register("softmax_cross_entropy", ce_check)

    if corrupt is not None and corrupt != "relu":
        raise ValueError("only the relu backward can be corrupted as a negative control")
    saved_relu = ops.relu
    try:
        if corrupt == "relu":
            ops.relu = _corrupted_relu
        for name, check in checks:
            err = max(check(seed + t) for t in range(trials))
            results.append((name, err))
    finally:
        ops.relu = saved_relu
    return results
