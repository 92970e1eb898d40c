"""Latent-space algebra: blocks, label filtering, swapping, selective mixing.

The encoder output is split along channels into two equal halves. The first
half is partitioned into one block per attribute (contiguous channel ranges,
declaration order); the second half is the attribute-irrelevant remainder.
Filtering multiplies block i by the binary label bit i, swapping exchanges
the filtered attribute halves of two latents, and mixing builds a per-block
blend of two latents under a user mask.

Everything here is a pure view/multiply on tensors shaped (..., C, h, w);
no network state is involved, and all functions are safe to call
concurrently on distinct inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigError


@dataclass(frozen=True)
class LatentCode:
    """Structured latent: per-attribute blocks plus the irrelevant part."""

    blocks: tuple[torch.Tensor, ...]
    irrelevant: torch.Tensor

    @property
    def n_attrs(self) -> int:
        return len(self.blocks)

    @property
    def block_channels(self) -> int:
        return self.blocks[0].shape[-3]

    def to_tensor(self) -> torch.Tensor:
        """Concatenate [blocks..., irrelevant] back into one channel stack."""
        return torch.cat([*self.blocks, self.irrelevant], dim=-3)


@dataclass(frozen=True)
class FilteredLatent(LatentCode):
    """A LatentCode whose blocks were gated by binary labels (zero where 0)."""

    labels: torch.Tensor


def split(raw: torch.Tensor, n_attrs: int) -> LatentCode:
    """Split raw encoder channels into n_attrs equal blocks + irrelevant half."""
    if raw.dim() < 3:
        raise ValueError(f"latent tensor must be (..., C, h, w), got {tuple(raw.shape)}")
    if n_attrs < 1:
        raise ValueError("n_attrs must be at least 1")
    channels = raw.shape[-3]
    if channels % 2 != 0 or (channels // 2) % n_attrs != 0:
        raise ConfigError(
            f"cannot split {channels} latent channels into {n_attrs} attribute "
            f"blocks plus an equal irrelevant half; channel count must be a "
            f"multiple of {2 * n_attrs}"
        )
    half = channels // 2
    per_block = half // n_attrs
    blocks = tuple(raw.narrow(-3, i * per_block, per_block) for i in range(n_attrs))
    return LatentCode(blocks=blocks, irrelevant=raw.narrow(-3, half, half))


def _check_binary(vec: torch.Tensor, name: str):
    if not torch.all((vec == 0) | (vec == 1)):
        raise ValueError(f"{name} must be binary (0/1), got {vec.tolist()}")


def _bit(vec: torch.Tensor, i: int, like: torch.Tensor) -> torch.Tensor:
    # Label vectors are either (n,) applying to all leading dims of the
    # block, or (batch, n) matched against 4-d blocks.
    if vec.dim() == 1:
        return vec[i].to(like.dtype)
    return vec[:, i].to(like.dtype).view(-1, *([1] * (like.dim() - 1)))


def _check_labels(labels: torch.Tensor, n_attrs: int, name: str = "labels") -> torch.Tensor:
    labels = torch.as_tensor(labels)
    if labels.dim() not in (1, 2) or labels.shape[-1] != n_attrs:
        raise ValueError(
            f"{name} must have {n_attrs} entries, got shape {tuple(labels.shape)}"
        )
    _check_binary(labels, name)
    return labels


def filter_code(code: LatentCode, labels: torch.Tensor) -> FilteredLatent:
    """Gate each attribute block by its label bit; pass the irrelevant half through."""
    labels = _check_labels(labels, code.n_attrs)
    blocks = tuple(block * _bit(labels, i, block) for i, block in enumerate(code.blocks))
    return FilteredLatent(blocks=blocks, irrelevant=code.irrelevant, labels=labels)


def _check_same_layout(a: LatentCode, b: LatentCode):
    if a.n_attrs != b.n_attrs or a.irrelevant.shape != b.irrelevant.shape or any(
        x.shape != y.shape for x, y in zip(a.blocks, b.blocks)
    ):
        raise ValueError("latent codes have mismatched shapes")


def swap(src: FilteredLatent, exemplar: FilteredLatent) -> tuple[FilteredLatent, FilteredLatent]:
    """Exchange the filtered attribute halves of two latents.

    Returns (z_c, z_d): z_c carries the exemplar's blocks over the source's
    irrelevant part, z_d the source's blocks over the exemplar's irrelevant
    part.
    """
    _check_same_layout(src, exemplar)
    z_c = FilteredLatent(blocks=exemplar.blocks, irrelevant=src.irrelevant,
                         labels=exemplar.labels)
    z_d = FilteredLatent(blocks=src.blocks, irrelevant=exemplar.irrelevant,
                         labels=src.labels)
    return z_c, z_d


def mix(src: LatentCode, src_labels, exemplar: LatentCode, ex_labels, mask,
        mode: str = "mix") -> FilteredLatent:
    """Selective per-attribute transfer from an exemplar latent.

    For mask bit 1, block i comes from the exemplar (gated by its label);
    with mode="mix" unmasked blocks keep the source's own filtered content,
    with mode="replace" they are zeroed. The irrelevant part is always the
    source's.
    """
    if mode not in ("mix", "replace"):
        raise ValueError(f"mode must be 'mix' or 'replace', got {mode!r}")
    _check_same_layout(src, exemplar)
    n = src.n_attrs
    src_labels = _check_labels(src_labels, n, "src_labels")
    ex_labels = _check_labels(ex_labels, n, "ex_labels")
    mask = _check_labels(mask, n, "mask")

    take_ex = mask * ex_labels
    keep_src = (1 - mask) * src_labels
    blocks = []
    effective = take_ex if mode == "replace" else take_ex + (1 - mask) * src_labels
    for i in range(n):
        block = exemplar.blocks[i] * _bit(take_ex, i, exemplar.blocks[i])
        if mode == "mix":
            block = block + src.blocks[i] * _bit(keep_src, i, src.blocks[i])
        blocks.append(block)
    return FilteredLatent(blocks=tuple(blocks), irrelevant=src.irrelevant,
                          labels=effective)
