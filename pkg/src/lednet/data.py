"""Seeded synthetic segmentation scenes plus portable netpbm image I/O.

Scenes are a deterministic function of (config seed, sample index):
class-0 background, then a few rectangles / disks / stripes drawn
back-to-front, rendered through a per-class color palette with optional
Gaussian noise.  Images travel as binary PPM (P6), labels as binary
PGM (P5); 255 is the ignore label.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

import numpy as np

IGNORE_INDEX = 255

DEFAULT_PALETTE = np.array(
    [
        (30, 30, 30),      # background
        (220, 60, 40),
        (60, 200, 70),
        (50, 90, 230),
        (230, 210, 50),
        (180, 60, 200),
        (60, 210, 210),
        (240, 140, 40),
    ],
    dtype=np.uint8,
)


class NetpbmError(ValueError):
    """Malformed PPM/PGM stream; message carries the failing byte offset."""


@dataclass
class SceneConfig:
    num_classes: int = 4
    height: int = 64
    width: int = 128
    min_shapes: int = 2
    max_shapes: int = 5
    noise_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least background + one foreground class")
        if self.num_classes > len(DEFAULT_PALETTE):
            raise ValueError(f"palette covers at most {len(DEFAULT_PALETTE)} classes")


def palette_for(cfg):
    return DEFAULT_PALETTE[: cfg.num_classes]


def generate_scene(cfg, index):
    """One (image 3xHxW float in [0,1], label HxW uint8) pair."""
    rng = np.random.default_rng([int(cfg.seed), int(index)])
    h, w = cfg.height, cfg.width
    label = np.zeros((h, w), dtype=np.uint8)
    yy, xx = np.mgrid[0:h, 0:w]

    n_shapes = int(rng.integers(cfg.min_shapes, cfg.max_shapes + 1))
    for _ in range(n_shapes):
        cls = int(rng.integers(1, cfg.num_classes))
        kind = rng.choice(["rectangle", "disk", "stripe"])
        if kind == "rectangle":
            rh = int(rng.integers(h // 8, h // 2))
            rw = int(rng.integers(w // 8, w // 2))
            y0 = int(rng.integers(0, h - rh))
            x0 = int(rng.integers(0, w - rw))
            label[y0 : y0 + rh, x0 : x0 + rw] = cls
        elif kind == "disk":
            r = int(rng.integers(min(h, w) // 8, min(h, w) // 3))
            cy = int(rng.integers(r, h - r))
            cx = int(rng.integers(r, w - r))
            label[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = cls
        else:  # stripe
            thickness = int(rng.integers(3, max(4, h // 6)))
            if rng.integers(2):
                y0 = int(rng.integers(0, h - thickness))
                label[y0 : y0 + thickness, :] = cls
            else:
                x0 = int(rng.integers(0, w - thickness))
                label[:, x0 : x0 + thickness] = cls

    image = palette_for(cfg)[label].transpose(2, 0, 1).astype(np.float32) / 255.0
    if cfg.noise_std > 0:
        image = image + rng.normal(0.0, cfg.noise_std, size=image.shape).astype(np.float32)
        image = np.clip(image, 0.0, 1.0)
    return image, label


def generate_dataset(cfg, count):
    return [generate_scene(cfg, i) for i in range(count)]


def colorize(label, palette):
    """Per-pixel palette lookup; the ignore label renders black."""
    label = np.asarray(label)
    known = label[label != IGNORE_INDEX]
    if known.size and known.max() >= len(palette):
        raise ValueError(f"no palette entry for class {int(known.max())}")
    out = np.zeros(label.shape + (3,), dtype=np.uint8)
    mask = label != IGNORE_INDEX
    out[mask] = np.asarray(palette)[label[mask]]
    return out.transpose(2, 0, 1)


# -- netpbm ------------------------------------------------------------------

def _read_header(buf, magic):
    if buf[:2] != magic:
        raise NetpbmError(f"bad magic at byte 0: expected {magic!r}, got {buf[:2]!r}")
    pos = 2
    values = []
    while len(values) < 3:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if pos == start:
            raise NetpbmError(f"truncated header at byte {pos}")
        token = buf[start:pos]
        if not token.isdigit():
            raise NetpbmError(f"non-numeric header token at byte {start}: {token!r}")
        values.append(int(token))
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise NetpbmError(f"missing whitespace after maxval at byte {pos}")
    pos += 1
    width, height, maxval = values
    if maxval != 255:
        raise NetpbmError(f"unsupported maxval {maxval} (only 255)")
    return width, height, pos


def _read_payload(buf, pos, expected):
    payload = buf[pos : pos + expected]
    if len(payload) < expected:
        raise NetpbmError(
            f"truncated payload at byte {pos}: expected {expected} bytes, got {len(payload)}"
        )
    return payload


def write_ppm(path, image):
    """Write a 3xHxW float image in [0,1] (or uint8) as binary P6."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    _, h, w = image.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(image.transpose(1, 2, 0).tobytes())


def read_ppm(path):
    """Read a binary P6 file into a 3xHxW float image in [0,1]."""
    with open(path, "rb") as f:
        buf = f.read()
    w, h, pos = _read_header(buf, b"P6")
    payload = _read_payload(buf, pos, 3 * h * w)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return pixels.transpose(2, 0, 1).astype(np.float32) / 255.0


def write_pgm(path, label):
    label = np.asarray(label, dtype=np.uint8)
    h, w = label.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(label.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        buf = f.read()
    w, h, pos = _read_header(buf, b"P5")
    payload = _read_payload(buf, pos, h * w)
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


# -- dataset directory layout ------------------------------------------------

def save_dataset(directory, cfg, count):
    """Materialize `count` generated samples as img_%05d.ppm / lab_%05d.pgm
    pairs plus a dataset.cfg key=value file."""
    os.makedirs(directory, exist_ok=True)
    for i in range(count):
        image, label = generate_scene(cfg, i)
        write_ppm(os.path.join(directory, f"img_{i:05d}.ppm"), image)
        write_pgm(os.path.join(directory, f"lab_{i:05d}.pgm"), label)
    with open(os.path.join(directory, "dataset.cfg"), "w") as f:
        for fld in fields(cfg):
            f.write(f"{fld.name}={getattr(cfg, fld.name)}\n")
        f.write(f"count={count}\n")


def load_dataset(directory):
    """Read back a dataset directory; returns (cfg, [(image, label), ...])."""
    cfg_path = os.path.join(directory, "dataset.cfg")
    if not os.path.exists(cfg_path):
        raise FileNotFoundError(f"missing {cfg_path}")
    raw = {}
    with open(cfg_path) as f:
        for line in f:
            line = line.strip()
            if line:
                key, _, value = line.partition("=")
                raw[key] = value
    count = int(raw.pop("count"))
    cfg = SceneConfig(
        num_classes=int(raw["num_classes"]),
        height=int(raw["height"]),
        width=int(raw["width"]),
        min_shapes=int(raw["min_shapes"]),
        max_shapes=int(raw["max_shapes"]),
        noise_std=float(raw["noise_std"]),
        seed=int(raw["seed"]),
    )
    samples = []
    for i in range(count):
        image = read_ppm(os.path.join(directory, f"img_{i:05d}.ppm"))
        label = read_pgm(os.path.join(directory, f"lab_{i:05d}.pgm"))
        samples.append((image, label))
    return cfg, samples
