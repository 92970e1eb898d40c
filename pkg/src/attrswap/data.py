"""Attribute-labelled image batches.

Two sources share one batch contract: a procedural face-sprite generator
whose images are a pure function of (spec, seed, labels), and an adapter for
the CelebA annotation format. Training pairs (source, exemplar) are formed by
an in-batch derangement so no image is ever its own exemplar.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from .errors import ConfigError, DataError
from .seeding import derive_seed

# The eight annotation columns used for face editing. The source material
# names "Gender"; the annotation file calls that column "Male".
CELEBA_DEFAULT_ATTRS = (
    "Bangs",
    "Eyeglasses",
    "Male",
    "Smiling",
    "Mustache",
    "Blond_Hair",
    "Pale_Skin",
    "Mouth_Slightly_Open",
)

SPRITE_ATTRS = ("glasses", "smile", "bangs")


@dataclass
class LabeledBatch:
    """A batch of images in [-1, 1] with per-image binary attribute vectors."""

    images: torch.Tensor  # (batch, 3, size, size), float
    labels: torch.Tensor  # (batch, n_attrs), values in {0, 1}

    def __post_init__(self):
        if self.images.dim() != 4 or self.labels.dim() != 2:
            raise ValueError(
                f"expected images (b,c,h,w) and labels (b,n), got "
                f"{tuple(self.images.shape)} / {tuple(self.labels.shape)}"
            )
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"batch size mismatch: {self.images.shape[0]} images vs "
                f"{self.labels.shape[0]} label rows"
            )
        if not torch.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be binary (0/1)")

    @property
    def batch_size(self) -> int:
        return self.images.shape[0]

    @property
    def n_attrs(self) -> int:
        return self.labels.shape[1]


def make_pairs(batch: LabeledBatch, seed: int) -> tuple[LabeledBatch, LabeledBatch]:
    """Form (source, exemplar) pairs by a seeded in-batch derangement.

    The exemplar side is the batch permuted along a random cycle, so it is a
    permutation with no fixed point: a source image never receives itself as
    exemplar (an identical pair would make the swap objective degenerate).
    """
    n = batch.batch_size
    if n < 2:
        raise ValueError(f"cannot form exemplar pairs from a batch of size {n}")
    order = np.random.default_rng(seed).permutation(n)
    exemplar_of = np.empty(n, dtype=np.int64)
    exemplar_of[order] = np.roll(order, -1)  # order[j] -> order[j+1]: one n-cycle
    idx = torch.from_numpy(exemplar_of)
    return batch, LabeledBatch(batch.images[idx], batch.labels[idx])


# ---------------------------------------------------------------------------
# Procedural sprites
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpriteSpec:
    """Geometry and palette of the procedural face sprites.

    Each attribute toggles a fixed pixel region, disjoint from the others;
    the regions shift together with the per-seed face jitter, so within any
    one image they stay disjoint.
    """

    image_size: int = 32
    attributes: tuple[str, ...] = SPRITE_ATTRS
    background: tuple[int, int, int] = (52, 72, 110)
    skin: tuple[int, int, int] = (224, 172, 120)
    feature: tuple[int, int, int] = (38, 26, 22)
    jitter: int = 2

    def __post_init__(self):
        if self.image_size < 16:
            raise ConfigError("sprite image_size must be at least 16")
        unknown = [a for a in self.attributes if a not in SPRITE_ATTRS]
        if unknown:
            raise ConfigError(
                f"unsupported sprite attributes {unknown}; supported: {list(SPRITE_ATTRS)}"
            )
        if self.jitter < 0 or self.jitter > self.image_size // 8:
            raise ConfigError(f"jitter {self.jitter} out of range for size {self.image_size}")

    @property
    def n_attrs(self) -> int:
        return len(self.attributes)


# Base-layout coordinates on a 32px canvas: (row0, row1, col0, col1).
_GLASSES_BOX = (11, 16, 6, 26)
_BANGS_BOX = (3, 7, 8, 24)
_MOUTH_BOX = (20, 25, 11, 21)
_EYE_BOXES = ((12, 15, 10, 14), (12, 15, 18, 22))


def _scaled_box(box, size, dy, dx):
    r0, r1, c0, c1 = (int(round(v * size / 32)) for v in box)
    return r0 + dy, r1 + dy, c0 + dx, c1 + dx


def _jitter_offset(spec: SpriteSpec, seed: int) -> tuple[int, int]:
    rng = np.random.default_rng(seed)
    dy, dx = rng.integers(-spec.jitter, spec.jitter + 1, size=2)
    return int(dy), int(dx)


def region_masks(spec: SpriteSpec, seed: int) -> dict[str, np.ndarray]:
    """Boolean (size, size) masks of the pixel region each attribute toggles."""
    size = spec.image_size
    dy, dx = _jitter_offset(spec, seed)
    boxes = {"glasses": _GLASSES_BOX, "bangs": _BANGS_BOX, "smile": _MOUTH_BOX}
    masks = {}
    for name in spec.attributes:
        r0, r1, c0, c1 = _scaled_box(boxes[name], size, dy, dx)
        mask = np.zeros((size, size), dtype=bool)
        mask[r0:r1, c0:c1] = True
        masks[name] = mask
    return masks


def _paint(img, box, color):
    r0, r1, c0, c1 = box
    img[r0:r1, c0:c1] = color


def generate_sprite(spec: SpriteSpec, labels, seed: int) -> np.ndarray:
    """Render one face sprite as a float32 (3, size, size) array in [-1, 1].

    Deterministic: the same (spec, labels, seed) always yields bit-identical
    pixels, and the same seed with different labels differs only inside the
    toggled attribute regions.
    """
    labels = np.asarray(labels)
    if labels.shape != (spec.n_attrs,):
        raise ConfigError(
            f"label vector has shape {labels.shape}, expected ({spec.n_attrs},) "
            f"for attributes {list(spec.attributes)}"
        )
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("sprite labels must be binary (0/1)")
    on = {name: bool(labels[i]) for i, name in enumerate(spec.attributes)}

    size = spec.image_size
    dy, dx = _jitter_offset(spec, seed)
    bg, skin, feat = (np.asarray(c, np.float32) / 127.5 - 1.0 for c in
                      (spec.background, spec.skin, spec.feature))

    img = np.empty((size, size, 3), dtype=np.float32)
    img[:] = bg

    # Face: filled ellipse centered just below the middle of the canvas.
    cy, cx = 16.5 * size / 32 + dy, 16.0 * size / 32 + dx
    ry, rx = 12.0 * size / 32, 11.0 * size / 32
    yy, xx = np.ogrid[:size, :size]
    img[((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0] = skin

    for box in _EYE_BOXES:
        _paint(img, _scaled_box(box, size, dy, dx), feat)

    if on.get("bangs"):
        _paint(img, _scaled_box(_BANGS_BOX, size, dy, dx), feat)
    if on.get("glasses"):
        _paint(img, _scaled_box(_GLASSES_BOX, size, dy, dx), feat)

    # Mouth: flat stroke by default, a U-shaped curve when smiling. Both
    # variants sit inside the smile region so the toggle is confined to it.
    if on.get("smile"):
        _paint(img, _scaled_box((23, 24, 13, 19), size, dy, dx), feat)
        _paint(img, _scaled_box((21, 23, 11, 13), size, dy, dx), feat)
        _paint(img, _scaled_box((21, 23, 19, 21), size, dy, dx), feat)
    else:
        _paint(img, _scaled_box((22, 23, 12, 20), size, dy, dx), feat)

    return np.ascontiguousarray(img.transpose(2, 0, 1))


class SpriteDataset:
    """A fixed collection of sprites addressed purely by (spec, seed).

    Labels are i.i.d. fair coin flips per attribute; images materialize
    lazily, so a 10k-image dataset costs nothing until sampled.
    """

    def __init__(self, spec: SpriteSpec = SpriteSpec(), n_images: int = 10000,
                 seed: int = 0, cache: bool = True):
        if n_images < 1:
            raise ConfigError("n_images must be positive")
        self.spec = spec
        self.n_images = n_images
        self.seed = seed
        rng = np.random.default_rng(derive_seed(seed, "labels"))
        self._labels = rng.integers(0, 2, size=(n_images, spec.n_attrs)).astype(np.float32)
        # Rendering is pure, so keeping rendered sprites around is safe; at
        # 12 KB per 32px image a 10k dataset costs ~120 MB when fully drawn.
        self._cache = {} if cache else None

    def __len__(self) -> int:
        return self.n_images

    @property
    def attributes(self) -> tuple[str, ...]:
        return self.spec.attributes

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    def label(self, index: int) -> np.ndarray:
        return self._labels[index]

    def image(self, index: int) -> np.ndarray:
        if self._cache is not None and index in self._cache:
            return self._cache[index]
        img = generate_sprite(self.spec, self._labels[index],
                              derive_seed(self.seed, "sprite", int(index)))
        if self._cache is not None:
            self._cache[int(index)] = img
        return img

    def batch(self, indices) -> LabeledBatch:
        indices = np.asarray(indices, dtype=np.int64)
        images = np.stack([self.image(i) for i in indices])
        return LabeledBatch(torch.from_numpy(images),
                            torch.from_numpy(self._labels[indices].copy()))

    def sample_batch(self, batch_size: int, seed: int) -> LabeledBatch:
        """Seeded batch draw; composition depends only on (dataset seed, seed)."""
        rng = np.random.default_rng(seed)
        return self.batch(rng.choice(self.n_images, size=batch_size, replace=False))

    def export_png(self, out_dir, indices=None):
        """Write sprites as 8-bit PNGs for visual inspection."""
        from .editing import save_png

        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for i in (range(self.n_images) if indices is None else indices):
            path = os.path.join(out_dir, f"sprite_{i:06d}.png")
            save_png(torch.from_numpy(self.image(i)), path)
            paths.append(path)
        return paths


# ---------------------------------------------------------------------------
# CelebA adapter
# ---------------------------------------------------------------------------


@dataclass
class DatasetSplit:
    """Disjoint train/val/test index lists covering a dataset."""

    train: list[int]
    val: list[int]
    test: list[int]
    n_attrs: int
    attributes: tuple[str, ...]


def parse_celeba_attrs(attr_file):
    """Parse the standard annotation text file.

    Line 1 is the image count, line 2 the 40 attribute names, each further
    line ``filename v1 ... v40`` with v in {-1, 1}.
    """
    with open(attr_file, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 2:
        raise DataError(f"{attr_file}: expected a count line and a header line")
    try:
        count = int(lines[0].strip())
    except ValueError:
        raise DataError(f"{attr_file}:1: first line must be the image count") from None
    names = lines[1].split()
    files, values = [], []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != len(names) + 1:
            raise DataError(
                f"{attr_file}:{lineno}: expected filename plus {len(names)} values, "
                f"got {len(parts)} fields"
            )
        try:
            row = [int(v) for v in parts[1:]]
        except ValueError:
            raise DataError(f"{attr_file}:{lineno}: non-integer attribute value") from None
        if any(v not in (-1, 1) for v in row):
            raise DataError(f"{attr_file}:{lineno}: attribute values must be -1 or 1")
        files.append(parts[0])
        values.append(row)
    if count != len(files):
        raise DataError(
            f"{attr_file}: header count {count} does not match {len(files)} rows"
        )
    return names, files, np.asarray(values, dtype=np.int64)


def _file_order_split(n: int) -> tuple[list[int], list[int], list[int]]:
    # Full-size archives follow the standard 160k/20k/rest protocol; smaller
    # collections keep the same 8:1:1 proportions.
    if n >= 200000:
        n_train, n_val = 160000, 20000
    else:
        n_train, n_val = round(0.8 * n), round(0.1 * n)
    idx = list(range(n))
    return idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:]


def _partition_split(partition_file, files) -> tuple[list[int], list[int], list[int]]:
    flags = {}
    with open(partition_file, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2 or parts[1] not in ("0", "1", "2"):
                raise DataError(f"{partition_file}:{lineno}: expected 'filename 0|1|2'")
            flags[parts[0]] = int(parts[1])
    buckets = ([], [], [])
    for i, name in enumerate(files):
        if name not in flags:
            raise DataError(f"{partition_file}: no partition entry for {name}")
        buckets[flags[name]].append(i)
    return buckets


class CelebaDataset:
    """Lazy image access over a CelebA-style directory plus annotation file."""

    def __init__(self, image_dir, attr_file, chosen_attrs=CELEBA_DEFAULT_ATTRS,
                 image_size: int = 128, partition_file=None):
        names, files, values = parse_celeba_attrs(attr_file)
        missing = [a for a in chosen_attrs if a not in names]
        if missing:
            raise ConfigError(
                f"unknown attribute name(s) {missing}; valid names: {names}"
            )
        cols = [names.index(a) for a in chosen_attrs]
        self.image_dir = image_dir
        self.image_size = image_size
        self.files = files
        self.attributes = tuple(chosen_attrs)
        # Remap annotation values -1 -> 0, 1 -> 1, keeping the given order.
        self._labels = ((values[:, cols] + 1) // 2).astype(np.float32)
        parts = (_partition_split(partition_file, files) if partition_file
                 else _file_order_split(len(files)))
        self.split = DatasetSplit(*parts, n_attrs=len(chosen_attrs),
                                  attributes=self.attributes)

    def __len__(self) -> int:
        return len(self.files)

    @property
    def n_attrs(self) -> int:
        return len(self.attributes)

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    def label(self, index: int) -> np.ndarray:
        return self._labels[index]

    def image(self, index: int) -> np.ndarray:
        path = os.path.join(self.image_dir, self.files[index])
        with Image.open(path) as im:
            im = im.convert("RGB").resize((self.image_size, self.image_size),
                                          Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 127.5 - 1.0
        return np.ascontiguousarray(arr.transpose(2, 0, 1))

    def batch(self, indices) -> LabeledBatch:
        indices = np.asarray(indices, dtype=np.int64)
        images = np.stack([self.image(i) for i in indices])
        return LabeledBatch(torch.from_numpy(images),
                            torch.from_numpy(self._labels[indices].copy()))

    def sample_batch(self, batch_size: int, seed: int,
                     indices=None) -> LabeledBatch:
        pool = np.asarray(self.split.train if indices is None else indices)
        rng = np.random.default_rng(seed)
        return self.batch(rng.choice(pool, size=batch_size, replace=False))


def load_celeba(image_dir, attr_file, chosen_attrs=CELEBA_DEFAULT_ATTRS,
                image_size: int = 128, partition_file=None) -> CelebaDataset:
    """Open a CelebA-style dataset; see CelebaDataset for the split rules."""
    return CelebaDataset(image_dir, attr_file, chosen_attrs=chosen_attrs,
                         image_size=image_size, partition_file=partition_file)
