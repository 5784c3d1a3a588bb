"""Synthetic shapes dataset: rendering, captions, record files, PPM export.

Images are 16x16x3 float32 in [-1, 1] on a dark gray background; the 12
classes are the (color, shape) pairs. Rendering is hard-edged and keeps a
one-pixel background border so the pixel-analysis oracle validates every
ground-truth render.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .encoders import DEFAULT_VOCAB, TOKEN_LEN, tokenize, write_vocab
from .errors import ConfigError

COLORS = ("red", "green", "blue", "yellow")
SHAPES = ("square", "circle", "triangle")
CLASSES = tuple((c, s) for c in COLORS for s in SHAPES)  # class_id = 3*color + shape

PALETTE = {
    "red": np.array([0.8, -0.8, -0.8], dtype=np.float32),
    "green": np.array([-0.8, 0.7, -0.7], dtype=np.float32),
    "blue": np.array([-0.7, -0.6, 0.8], dtype=np.float32),
    "yellow": np.array([0.9, 0.7, -0.8], dtype=np.float32),
}
BACKGROUND = np.array([-0.6, -0.6, -0.6], dtype=np.float32)

CAPTION_TEMPLATES = ("a {}", "a photo of a {}", "an image of a {}")

_MAGIC = b"SHAPERC1"
_HEADER_LEN = 64
_VERSION = 1


@dataclass(frozen=True)
class SyntheticSpec:
    image_size: int = 16
    half_extent: tuple = (3, 5)       # shape half-size / radius range (ints)
    border: int = 1                   # background-only margin
    templates: tuple = CAPTION_TEMPLATES
    train_size: int = 1200
    val_size: int = 120
    test_size: int = 600

    def __post_init__(self):
        for name in ("train_size", "val_size", "test_size"):
            if getattr(self, name) % len(CLASSES):
                raise ConfigError(f"{name} must be a multiple of {len(CLASSES)} "
                                  "for exact class balance")


def render_shape(rng, color, shape, spec=SyntheticSpec()):
    """One hard-edged shape with jittered size and position."""
    n = spec.image_size
    h = int(rng.integers(spec.half_extent[0], spec.half_extent[1] + 1))
    lo = h + spec.border
    hi = n - 1 - h - spec.border
    cx = int(rng.integers(lo, hi + 1))
    cy = int(rng.integers(lo, hi + 1))
    yy, xx = np.mgrid[0:n, 0:n]
    if shape == "square":
        mask = (np.abs(xx - cx) <= h) & (np.abs(yy - cy) <= h)
    elif shape == "circle":
        r = h + 0.3
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    elif shape == "triangle":
        rel = yy - (cy - h)  # 0 at apex row, 2h at base row
        halfw = rel / 2.0
        mask = (rel >= 0) & (rel <= 2 * h) & (np.abs(xx - cx) <= halfw)
    else:
        raise ConfigError(f"unknown shape {shape!r}")
    img = np.broadcast_to(BACKGROUND, (n, n, 3)).copy()
    img[mask] = PALETTE[color]
    return img


def make_caption(rng, color, shape, spec=SyntheticSpec()):
    template = spec.templates[int(rng.integers(0, len(spec.templates)))]
    return template.format(f"{color} {shape}")


@dataclass
class DatasetSplit:
    images: np.ndarray     # (N,16,16,3) f32
    token_ids: np.ndarray  # (N,L) int64
    class_ids: np.ndarray  # (N,) int64
    captions: list


def gen_dataset(spec: SyntheticSpec, seed, out_dir):
    """Write class-balanced train/val/test record files plus the vocabulary.

    Every record is checked against the caption-consistency oracle before the
    files are considered valid.
    """
    from .evaluation import caption_consistency

    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    write_vocab(os.path.join(out_dir, "vocab.txt"))
    paths = []
    for split, size in (("train", spec.train_size), ("val", spec.val_size),
                        ("test", spec.test_size)):
        per_class = size // len(CLASSES)
        images, ids, class_ids, captions = [], [], [], []
        for class_id, (color, shape) in enumerate(CLASSES):
            for _ in range(per_class):
                img = render_shape(rng, color, shape, spec)
                cap = make_caption(rng, color, shape, spec)
                images.append(img)
                ids.append(tokenize(cap))
                class_ids.append(class_id)
                captions.append(cap)
        order = rng.permutation(size)
        images = np.stack(images)[order]
        ids = np.array(ids, dtype=np.int64)[order]
        class_ids = np.array(class_ids, dtype=np.int64)[order]
        captions = [captions[i] for i in order]
        for img, cap in zip(images, captions):
            if not caption_consistency(img, cap):
                raise RuntimeError(f"render failed its own caption oracle: {cap!r}")
        path = os.path.join(out_dir, f"{split}.rec")
        _write_records(path, images, ids, seed)
        _write_index(os.path.join(out_dir, f"{split}.idx"), class_ids, captions)
        paths.append(path)
    return paths


def _write_records(path, images, ids, seed):
    n, h, w, c = images.shape
    header = _MAGIC + struct.pack(
        "<IIIIIIIQ", _VERSION, n, h, w, c, ids.shape[1], len(CLASSES), seed)
    header += b"\x00" * (_HEADER_LEN - len(header))
    with open(path, "wb") as fh:
        fh.write(header)
        for img, row in zip(images, ids):
            fh.write(img.astype("<f4").tobytes())
            fh.write(row.astype("<u2").tobytes())


def _write_index(path, class_ids, captions):
    with open(path, "w", encoding="utf-8") as fh:
        for cid, cap in zip(class_ids, captions):
            fh.write(f"{cid}\t{cap}\n")


def load_split(out_dir, split) -> DatasetSplit:
    path = os.path.join(out_dir, f"{split}.rec")
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise ConfigError(f"{path}: not a shapes record file")
    version, n, h, w, c, token_len, _, _ = struct.unpack("<IIIIIIIQ", blob[8:44])
    if version != _VERSION:
        raise ConfigError(f"{path}: unsupported record version {version}")
    img_bytes = h * w * c * 4
    rec_bytes = img_bytes + token_len * 2
    body = blob[_HEADER_LEN:]
    if len(body) < n * rec_bytes:
        raise ConfigError(f"{path}: truncated record payload")
    images = np.empty((n, h, w, c), dtype=np.float32)
    ids = np.empty((n, token_len), dtype=np.int64)
    for i in range(n):
        off = i * rec_bytes
        images[i] = np.frombuffer(body, "<f4", h * w * c, off).reshape(h, w, c)
        ids[i] = np.frombuffer(body, "<u2", token_len, off + img_bytes)
    class_ids, captions = _read_index(os.path.join(out_dir, f"{split}.idx"))
    if len(captions) != n:
        raise ConfigError(f"{path}: index length {len(captions)} != record count {n}")
    return DatasetSplit(images, ids, class_ids, captions)


def _read_index(path):
    class_ids, captions = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            cid, cap = line.rstrip("\n").split("\t", 1)
            class_ids.append(int(cid))
            captions.append(cap)
    return np.array(class_ids, dtype=np.int64), captions


def write_ppm(path, image):
    """Plain PPM P6, values mapped from [-1,1] by round((v+1)*127.5)."""
    img = np.asarray(image, dtype=np.float32)
    h, w, _ = img.shape
    data = np.clip(np.rint((img + 1.0) * 127.5), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ConfigError(f"{path}: not a P6 PPM")
    w, h = (int(x) for x in parts[1].split())
    data = np.frombuffer(parts[3], dtype=np.uint8, count=h * w * 3).reshape(h, w, 3)
    return data.astype(np.float32) / 127.5 - 1.0


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        digest.update(fh.read())
    return digest.hexdigest()
