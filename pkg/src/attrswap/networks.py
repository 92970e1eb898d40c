"""The parametric pieces: encoder/decoder generator and critic/classifier.

Conventions (the source material leaves these open, so they follow the
common practice for penalty-regularized adversarial training):

* down-sampling = stride-2 4x4 convolution; channel width doubles per layer
  and is capped at ``max_channels``;
* the final encoder layer's width is rounded up to the nearest multiple of
  2 * n_attrs so the latent splits into equal attribute blocks plus an
  equally sized irrelevant half;
* instance normalization inside the generator only; the critic has none
  (norm layers interact badly with the per-sample gradient penalty);
* the critic emits an unbounded scalar score (no terminal squashing; the
  Wasserstein objective takes expectations of raw scores), while the
  classifier head keeps a sigmoid, clamped away from exact 0/1;
* on small canvases the critic keeps its depth by switching to stride-1
  1x1 convolutions once the spatial extent reaches 1.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .errors import ConfigError

PROB_EPS = 1e-7
CHECKPOINT_VERSION = 1


def _round_up(value: int, multiple: int) -> int:
    return ((value + multiple - 1) // multiple) * multiple


@dataclass(frozen=True)
class ModelConfig:
    """Shapes and widths of all networks."""

    image_size: int = 32
    n_attrs: int = 3
    down_layers: int = 4
    base_channels: int = 32
    critic_layers: int = 6
    max_channels: int = 512

    def __post_init__(self):
        if self.n_attrs < 1:
            raise ConfigError("n_attrs must be at least 1")
        if self.down_layers < 1 or self.critic_layers < 1:
            raise ConfigError("layer counts must be at least 1")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be positive")
        factor = 2 ** self.down_layers
        if self.image_size % factor != 0 or self.image_size < factor:
            raise ConfigError(
                f"image_size {self.image_size} is not divisible into "
                f"{self.down_layers} halvings (needs a nonzero multiple of {factor})"
            )

    @property
    def encoder_channels(self) -> list[int]:
        chans = [min(self.base_channels << k, self.max_channels)
                 for k in range(1, self.down_layers + 1)]
        chans[-1] = _round_up(chans[-1], 2 * self.n_attrs)
        return chans

    @property
    def latent_channels(self) -> int:
        return self.encoder_channels[-1]

    @property
    def latent_size(self) -> int:
        return self.image_size >> self.down_layers

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.latent_channels, self.latent_size, self.latent_size)


class Encoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        chans = [3] + config.encoder_channels
        layers = []
        for i in range(config.down_layers):
            layers.append(nn.Conv2d(chans[i], chans[i + 1], 4, stride=2, padding=1))
            if i < config.down_layers - 1:
                layers.append(nn.InstanceNorm2d(chans[i + 1], affine=True))
                layers.append(nn.LeakyReLU(0.2))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class Decoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        chans = [config.latent_channels] + config.encoder_channels[-2::-1] + [3]
        layers = []
        for i in range(config.down_layers):
            layers.append(nn.ConvTranspose2d(chans[i], chans[i + 1], 4, stride=2, padding=1))
            if i < config.down_layers - 1:
                layers.append(nn.InstanceNorm2d(chans[i + 1], affine=True))
                layers.append(nn.ReLU())
        layers.append(nn.Tanh())
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        return self.net(z)


class Generator(nn.Module):
    """Encoder + decoder pair; the only image-producing network."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.enc = Encoder(config)
        self.dec = Decoder(config)

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        if images.shape[-2:] != (self.config.image_size, self.config.image_size):
            raise ValueError(
                f"expected {self.config.image_size}px inputs, got {tuple(images.shape)}"
            )
        return self.enc(images)

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        if tuple(latent.shape[-3:]) != self.config.latent_shape:
            raise ValueError(
                f"latent shape {tuple(latent.shape[-3:])} does not match "
                f"model latent shape {self.config.latent_shape}"
            )
        return self.dec(latent)

    def forward(self, images):
        return self.decode(self.encode(images))


class Critic(nn.Module):
    """Shared convolutional backbone with a realism head and an attribute head."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        layers = []
        ch, size = 3, config.image_size
        for k in range(1, config.critic_layers + 1):
            out = min(config.base_channels << k, config.max_channels)
            if size > 1:
                layers += [nn.Conv2d(ch, out, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
                size = (size - 2) // 2 + 1
            else:
                layers += [nn.Conv2d(ch, out, 1), nn.LeakyReLU(0.2)]
            ch = out
        self.backbone = nn.Sequential(*layers)
        self._feat_dim = ch * size * size
        self.score_head = nn.Linear(self._feat_dim, 1)
        self.attr_head = nn.Linear(self._feat_dim, config.n_attrs)

    def features(self, images: torch.Tensor) -> torch.Tensor:
        return self.backbone(images).flatten(1)

    def score(self, images: torch.Tensor) -> torch.Tensor:
        """Unbounded per-image realism score, shape (batch,)."""
        return self.score_head(self.features(images)).squeeze(-1)

    def classify(self, images: torch.Tensor) -> torch.Tensor:
        """Per-attribute probabilities in the open interval (0, 1)."""
        probs = torch.sigmoid(self.attr_head(self.features(images)))
        return probs.clamp(PROB_EPS, 1.0 - PROB_EPS)

    def forward(self, images):
        """Joint evaluation over one backbone pass: (scores, probabilities)."""
        feats = self.features(images)
        probs = torch.sigmoid(self.attr_head(feats)).clamp(PROB_EPS, 1.0 - PROB_EPS)
        return self.score_head(feats).squeeze(-1), probs


def build_networks(config: ModelConfig) -> tuple[Generator, Critic]:
    return Generator(config), Critic(config)


# ---------------------------------------------------------------------------
# Checkpoint archive: one zip file holding the config as plain JSON text plus
# all named parameter/optimizer arrays.
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    config: ModelConfig
    generator: Generator
    critic: Critic
    step: int
    optimizer_states: dict
    extra: dict


def save_checkpoint(path, config: ModelConfig, generator: Generator, critic: Critic,
                    *, step: int = 0, optimizers=None, extra=None):
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "model": asdict(config),
        "step": step,
        "extra": extra or {},
    }
    payload = {
        "generator": generator.state_dict(),
        "critic": critic.state_dict(),
        "optimizers": {name: opt.state_dict() for name, opt in (optimizers or {}).items()},
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("config.json", json.dumps(meta, indent=2))
        zf.writestr("state.pt", buf.getvalue())


def load_checkpoint(path, expect_config: ModelConfig | None = None) -> Checkpoint:
    """Load an archive, validating config/shape consistency before weights."""
    with zipfile.ZipFile(path, "r") as zf:
        meta = json.loads(zf.read("config.json"))
        state_bytes = zf.read("state.pt")
    version = meta.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint format version {version!r}")
    config = ModelConfig(**meta["model"])
    if expect_config is not None and config != expect_config:
        diff = [f"{k}: checkpoint={v} requested={getattr(expect_config, k)}"
                for k, v in asdict(config).items() if getattr(expect_config, k) != v]
        raise ConfigError("checkpoint does not match requested config: " + "; ".join(diff))
    generator, critic = build_networks(config)
    payload = torch.load(io.BytesIO(state_bytes), weights_only=True)
    try:
        generator.load_state_dict(payload["generator"])
        critic.load_state_dict(payload["critic"])
    except RuntimeError as exc:
        raise ConfigError(f"checkpoint weights do not fit config {config}: {exc}") from exc
    return Checkpoint(config=config, generator=generator, critic=critic,
                      step=int(meta.get("step", 0)),
                      optimizer_states=payload.get("optimizers", {}),
                      extra=meta.get("extra", {}))
