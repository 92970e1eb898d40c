import pytest
import torch

from attrswap import (LossWeights, ModelConfig, SpriteDataset, SpriteSpec,
                      TrainConfig, init_state, train_oracle)

torch.manual_seed(0)


@pytest.fixture(scope="session")
def sprites10k():
    """The full-size synthetic dataset shared by evaluation and acceptance."""
    return SpriteDataset(SpriteSpec(), n_images=10000, seed=11)


@pytest.fixture(scope="session")
def sprites_small():
    return SpriteDataset(SpriteSpec(), n_images=256, seed=3)


@pytest.fixture(scope="session")
def oracle(sprites10k):
    """Independent sprite classifier used as judge and feature extractor."""
    return train_oracle(sprites10k, steps=1200, seed=5)


def tiny_model(**kw) -> ModelConfig:
    defaults = dict(image_size=32, n_attrs=3, down_layers=3, base_channels=4,
                    critic_layers=4)
    defaults.update(kw)
    return ModelConfig(**defaults)


def tiny_state(seed=0, **kw):
    model_kw = {k: kw.pop(k) for k in list(kw) if k in ModelConfig.__dataclass_fields__}
    weights = kw.pop("weights", LossWeights())
    train = TrainConfig(batch_size=kw.pop("batch_size", 4),
                        n_critic=kw.pop("n_critic", 1), seed=seed, **kw)
    return init_state(tiny_model(**model_kw), train, weights)
