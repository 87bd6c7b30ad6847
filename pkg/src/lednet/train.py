"""SGD training loop with poly learning-rate schedule, and segmentation
metrics (confusion matrix, per-class IoU, pixel accuracy)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import GraphTape, NumericError, ShapeError, Tensor


@dataclass
class TrainConfig:
    base_lr: float = 5e-4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    power: float = 0.9
    max_iter: int = 2000
    batch_size: int = 5
    eval_every: int = 100
    ignore_index: int = 255


def poly_lr(cfg, iteration):
    """base_lr * (1 - iter/max_iter) ** power."""
    if iteration < 0 or iteration > cfg.max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {cfg.max_iter}]")
    return cfg.base_lr * (1.0 - iteration / cfg.max_iter) ** cfg.power


def _decays(name):
    # BN affine parameters and conv biases are excluded from weight decay
    leaf = name.rsplit(".", 1)[-1]
    return leaf not in ("gamma", "beta", "bias")


class SGD:
    """Momentum SGD with decoupled-from-nothing classic weight decay:
    v <- momentum*v + (g + wd*p);  p <- p - lr*v."""

    def __init__(self, params, cfg):
        self.params = params  # {name: Tensor}
        self.cfg = cfg
        self.velocity = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads, iteration):
        lr = poly_lr(self.cfg, iteration)
        for name, p in self.params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name}")
            if self.cfg.weight_decay and _decays(name):
                g = g + self.cfg.weight_decay * p.data
            v = self.velocity[name]
            v *= self.cfg.momentum
            v += g
            p.data -= (lr * v).astype(p.dtype)
        return lr


class ConfusionMatrix:
    """C x C integer counts; rows are ground truth, columns predictions."""

    def __init__(self, num_classes):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred, label, ignore_index=255):
        pred = np.asarray(pred)
        label = np.asarray(label)
        if pred.shape != label.shape:
            raise ShapeError(f"pred shape {pred.shape} != label shape {label.shape}")
        valid = label != ignore_index
        t = label[valid].astype(np.int64)
        p = pred[valid].astype(np.int64)
        if t.size:
            if t.min() < 0 or t.max() >= self.num_classes or p.min() < 0 or p.max() >= self.num_classes:
                raise ValueError("class index outside [0, C)")
            np.add.at(self.counts, (t, p), 1)
        return self

    def pixel_accuracy(self):
        total = self.counts.sum()
        if total == 0:
            raise ValueError("empty confusion matrix")
        return float(np.trace(self.counts) / total)

    def iou(self):
        """(per-class IoU list with None for absent classes, mean IoU).

        Classes that appear in neither truth nor prediction are excluded
        from the mean rather than counted as zero.
        """
        if self.counts.sum() == 0:
            raise ValueError("empty confusion matrix")
        tp = np.diag(self.counts).astype(np.float64)
        denom = self.counts.sum(axis=1) + self.counts.sum(axis=0) - np.diag(self.counts)
        per_class = [float(tp[c] / denom[c]) if denom[c] > 0 else None
                     for c in range(self.num_classes)]
        present = [v for v in per_class if v is not None]
        return per_class, float(np.mean(present))


def predict_labels(net, image_batch, training=False):
    """Argmax class map for a batch of images (numpy in, numpy out)."""
    logits = net.forward(Tensor(image_batch), training=training)
    return logits.data.argmax(axis=1)


def calibrate_bn(net, image_batch):
    """Set every BN layer's running statistics to the exact statistics of
    `image_batch` (one momentum-1 forward pass).

    Checkpoints carry trainable parameters only, so inference from a
    freshly loaded checkpoint calibrates on the data it is about to see.
    """
    from .model import BatchNorm2d

    bns = [m for m in net.modules() if isinstance(m, BatchNorm2d)]
    saved = [bn.momentum for bn in bns]
    for bn in bns:
        bn.momentum = 1.0
    try:
        net.forward(Tensor(image_batch), training=True)
    finally:
        for bn, m in zip(bns, saved):
            bn.momentum = m


def evaluate(net, dataset, num_classes, ignore_index=255, batch_size=5,
             calibrate=True, calibrate_limit=16):
    """Confusion-matrix metrics of `net` over (image, label) pairs."""
    if calibrate:
        calibrate_bn(net, np.stack([s[0] for s in dataset[:calibrate_limit]]))
    cm = ConfusionMatrix(num_classes)
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start : start + batch_size]
        images = np.stack([s[0] for s in chunk])
        labels = np.stack([s[1] for s in chunk])
        cm.update(predict_labels(net, images), labels, ignore_index)
    return cm


def train(net, dataset, iters, seed, cfg, log=None, stop_miou=None):
    """Iteration-based training; deterministic for a fixed seed.

    `dataset` is a list of (image CxHxW float array, label HxW int array)
    pairs.  Returns the list of metric-log lines (`iter=... lr=... loss=...`
    plus periodic `eval iter=... miou=... pixacc=...` records).
    """
    if not dataset:
        raise ValueError("empty dataset")
    if iters > cfg.max_iter:
        raise ValueError(f"iters {iters} exceeds max_iter {cfg.max_iter}")
    params = net.named_parameters()
    opt = SGD(params, cfg)
    order_rng = np.random.default_rng(int(seed))
    lines = []

    def emit(line):
        lines.append(line)
        if log is not None:
            log(line)

    for it in range(iters):
        idx = order_rng.choice(len(dataset), size=min(cfg.batch_size, len(dataset)),
                               replace=False)
        images = np.stack([dataset[i][0] for i in idx])
        labels = np.stack([dataset[i][1] for i in idx])
        x = Tensor(images)
        with GraphTape() as tape:
            logits = net.forward(x, training=True)
            loss = ops.softmax_cross_entropy(logits, labels, cfg.ignore_index)
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise NumericError(f"non-finite loss at iteration {it}")
        grad_map = tape.gradients(loss, params=list(params.values()))
        grads = {name: grad_map[p].data for name, p in params.items()}
        lr = opt.step(grads, it)
        emit(f"iter={it} lr={lr:.10g} loss={loss_value:.10g}")

        if cfg.eval_every and (it + 1) % cfg.eval_every == 0:
            cm = evaluate(net, dataset, net.num_classes, cfg.ignore_index, cfg.batch_size)
            _, miou = cm.iou()
            emit(f"eval iter={it} miou={miou:.6f} pixacc={cm.pixel_accuracy():.6f}")
            if stop_miou is not None and miou > stop_miou:
                break
    return lines
