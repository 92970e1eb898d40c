"""Exemplar-based facial-attribute transfer via label-filtered latent blocks.

The encoder output splits into per-attribute channel blocks plus an
attribute-irrelevant half; binary labels gate the blocks, and swapping the
gated halves between an image and an exemplar transfers the selected
attributes in a single pass.
"""

from .data import (CELEBA_DEFAULT_ATTRS, SPRITE_ATTRS, CelebaDataset, LabeledBatch,
                   SpriteDataset, SpriteSpec, generate_sprite, load_celeba, make_pairs)
from .errors import AttrSwapError, ConfigError, DataError, NumericsError
from .latent import FilteredLatent, LatentCode, filter_code, mix, split, swap
from .losses import (LossReport, LossWeights, adv_loss_d, adv_loss_g, attr_cls_loss,
                     gradient_penalty, reconstruction_loss, total_losses)
from .networks import (Critic, Generator, ModelConfig, build_networks,
                       load_checkpoint, save_checkpoint)
from .editing import (load_png, montage, multi_transfer, reconstruct, save_png,
                      transfer)
from .evaluation import (EvalReport, FeatureStats, OracleClassifier, StatsAccumulator,
                         attribute_match_rate, evaluate_model, extract_features,
                         frechet_distance, load_oracle, run_ablation, save_oracle,
                         train_oracle)
from .config import DataConfig, RunConfig, build_config, build_dataset, load_config
from .seeding import derive_seed
from .training import (TrainConfig, TrainState, forward_pass, init_state,
                       load_train_state, save_train_state, train, train_step)

__version__ = "0.1.0"
