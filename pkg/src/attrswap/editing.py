"""Inference-time editing over a trained generator.

All operations are read-only with respect to the model: reconstruct an
image, transfer masked attributes from an exemplar, or lay results out as a
comparison grid. Images travel as float tensors in [-1, 1], shaped (3, h, w)
or batched (b, 3, h, w); PNG serialization is fixed so saved artifacts are
bit-reproducible.
"""

from __future__ import annotations

import warnings

import numpy as np
import torch
from PIL import Image

from .latent import filter_code, mix, split
from .networks import Critic, Generator


def _batched(images: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if images.dim() == 3:
        return images.unsqueeze(0), True
    if images.dim() == 4:
        return images, False
    raise ValueError(f"expected (3,h,w) or (b,3,h,w) images, got {tuple(images.shape)}")


def reconstruct(generator: Generator, image: torch.Tensor,
                labels: torch.Tensor) -> torch.Tensor:
    """Encode, filter the attribute blocks by the image's own labels, decode."""
    batch, squeeze = _batched(image)
    with torch.no_grad():
        code = filter_code(split(generator.encode(batch), generator.config.n_attrs), labels)
        out = generator.decode(code.to_tensor())
    return out.squeeze(0) if squeeze else out


def transfer(generator: Generator, source: torch.Tensor, exemplar: torch.Tensor,
             ex_labels, mask, mode: str = "mix", src_labels=None) -> torch.Tensor:
    """Replace the masked attribute blocks of the source with the exemplar's.

    mode="mix" keeps the source's own content in unmasked blocks and needs
    src_labels; mode="replace" zeroes them. Selecting an attribute the
    exemplar lacks zeroes that block (removal) and emits a warning.
    """
    n = generator.config.n_attrs
    ex_labels = torch.as_tensor(ex_labels, dtype=torch.float32)
    mask = torch.as_tensor(mask, dtype=torch.float32)
    if mode == "mix" and src_labels is None:
        raise ValueError("mode='mix' requires src_labels for the unmasked blocks")
    if src_labels is None:
        src_labels = torch.zeros(n)
    src_labels = torch.as_tensor(src_labels, dtype=torch.float32)
    absent = torch.nonzero((mask == 1) & (ex_labels == 0)).flatten().tolist()
    if absent:
        warnings.warn(
            f"mask selects attribute(s) {absent} the exemplar does not have; "
            f"their blocks are zeroed (attribute removal)"
        )
    src_batch, squeeze = _batched(source)
    ex_batch, _ = _batched(exemplar)
    with torch.no_grad():
        code_src = split(generator.encode(src_batch), n)
        code_ex = split(generator.encode(ex_batch), n)
        mixed = mix(code_src, src_labels, code_ex, ex_labels, mask, mode)
        out = generator.decode(mixed.to_tensor())
    return out.squeeze(0) if squeeze else out


def multi_transfer(generator: Generator, source: torch.Tensor, exemplar: torch.Tensor,
                   ex_labels, mask, mode: str = "mix", src_labels=None) -> torch.Tensor:
    """Single-pass transfer of several attributes at once (mask has >= 2 ones)."""
    mask = torch.as_tensor(mask, dtype=torch.float32)
    if int(mask.sum()) < 2:
        raise ValueError("multi_transfer expects a mask selecting at least two attributes")
    return transfer(generator, source, exemplar, ex_labels, mask, mode, src_labels)


def predict_labels(critic: Critic, image: torch.Tensor) -> torch.Tensor:
    """Fill in labels from the classifier head; a convenience for unlabeled
    exemplars, not a substitute for annotation."""
    warnings.warn("exemplar labels predicted by the classifier, not user-provided")
    batch, squeeze = _batched(image)
    with torch.no_grad():
        labels = (critic.classify(batch) > 0.5).float()
    return labels.squeeze(0) if squeeze else labels


# ---------------------------------------------------------------------------
# PNG serialization
# ---------------------------------------------------------------------------


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """Map [-1, 1] float to (h, w, 3) uint8, rounding half away from zero."""
    if image.dim() != 3 or image.shape[0] != 3:
        raise ValueError(f"expected a (3,h,w) image, got {tuple(image.shape)}")
    arr = image.detach().numpy().astype(np.float64)
    scaled = (arr + 1.0) * 127.5
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(arr: np.ndarray) -> torch.Tensor:
    arr = np.asarray(arr, dtype=np.float32)
    return torch.from_numpy(np.ascontiguousarray((arr / 127.5 - 1.0).transpose(2, 0, 1)))


def save_png(image: torch.Tensor, path) -> None:
    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG")


def load_png(path) -> torch.Tensor:
    """Read a PNG back into a [-1, 1] float tensor (3, h, w)."""
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


# ---------------------------------------------------------------------------
# Comparison grids
# ---------------------------------------------------------------------------


def montage(rows, pad: int = 2, pad_value: float = 1.0) -> torch.Tensor:
    """Tile a list of image rows (None = blank cell) into one (3, H, W) image."""
    cells = [img for row in rows for img in row if img is not None]
    if not cells:
        raise ValueError("montage needs at least one image")
    c, h, w = cells[0].shape
    if any(img.shape != (c, h, w) for img in cells):
        raise ValueError("all montage cells must share one shape")
    n_cols = max(len(row) for row in rows)
    out = torch.full((c, len(rows) * (h + pad) + pad, n_cols * (w + pad) + pad),
                     pad_value)
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            if img is None:
                continue
            top, left = pad + i * (h + pad), pad + j * (w + pad)
            out[:, top:top + h, left:left + w] = img
    return out


def edit_grid(generator: Generator, sources, src_labels_list, exemplars,
              ex_labels_list, mask, mode: str = "mix") -> torch.Tensor:
    """Exemplar-transfer comparison sheet: exemplars across the top row,
    sources down the first column, cell (i, j) = transfer(source_i, exemplar_j)."""
    header = [None] + list(exemplars)
    rows = [header]
    for src, src_labels in zip(sources, src_labels_list):
        row = [src]
        for ex, ex_labels in zip(exemplars, ex_labels_list):
            row.append(transfer(generator, src, ex, ex_labels, mask, mode, src_labels))
        rows.append(row)
    return montage(rows)
