"""Run configuration: one structured document covering model, training,
losses, and data, validated before any compute happens.

A single top-level seed governs every random choice; components derive
sub-seeds by hashing stable purpose strings, so no section carries its own
seed field. Any config key can be overridden from the environment with
ATTRSWAP_<SECTION>__<FIELD> (ATTRSWAP_TRAIN__LR=0.001) or ATTRSWAP_<FIELD>
for top-level keys.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, fields

import yaml

from .data import CELEBA_DEFAULT_ATTRS, SPRITE_ATTRS, SpriteDataset, SpriteSpec, load_celeba
from .errors import ConfigError
from .losses import LossWeights
from .networks import ModelConfig
from .seeding import derive_seed
from .training import TrainConfig

ENV_PREFIX = "ATTRSWAP_"


@dataclass(frozen=True)
class DataConfig:
    source: str = "sprites"
    n_images: int = 10000
    attributes: tuple[str, ...] | None = None
    jitter: int = 2
    image_dir: str | None = None
    attr_file: str | None = None
    partition_file: str | None = None

    def __post_init__(self):
        if self.source not in ("sprites", "celeba"):
            raise ConfigError(f"data.source must be 'sprites' or 'celeba', got {self.source!r}")
        if self.source == "celeba":
            if not self.image_dir or not self.attr_file:
                raise ConfigError("data.source=celeba requires data.image_dir and data.attr_file")
        else:
            for name in ("image_dir", "attr_file", "partition_file"):
                if getattr(self, name) is not None:
                    raise ConfigError(f"data.{name} is only valid with data.source=celeba")
            if self.n_images < 2:
                raise ConfigError("data.n_images must be at least 2")

    @property
    def resolved_attributes(self) -> tuple[str, ...]:
        if self.attributes is not None:
            return tuple(self.attributes)
        return SPRITE_ATTRS if self.source == "sprites" else CELEBA_DEFAULT_ATTRS


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    loss: LossWeights = LossWeights()
    data: DataConfig = DataConfig()
    seed: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        n_names = len(self.data.resolved_attributes)
        if self.model.n_attrs != n_names:
            raise ConfigError(
                f"model.n_attrs={self.model.n_attrs} does not match data.attributes "
                f"({n_names} names: {list(self.data.resolved_attributes)})"
            )
        if self.train.seed != self.seed:
            # The top-level seed is the single source of randomness.
            object.__setattr__(self, "train",
                               TrainConfig(**{**asdict(self.train), "seed": self.seed}))

    def to_dict(self) -> dict:
        doc = {"model": asdict(self.model), "train": asdict(self.train),
               "loss": asdict(self.loss), "data": asdict(self.data),
               "seed": self.seed, "out_dir": self.out_dir}
        doc["train"].pop("seed")
        return doc


def _coerce_section(cls, raw: dict, section: str, banned=()):
    valid = [f.name for f in fields(cls) if f.name not in banned]
    unknown = [k for k in raw if k not in valid]
    if unknown:
        raise ConfigError(
            f"unknown key(s) {unknown} in section '{section}'; valid keys: {valid}"
        )
    if isinstance(raw.get("attributes"), list):
        raw = {**raw, "attributes": tuple(raw["attributes"])}
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad section '{section}': {exc}") from exc


def _apply_env(doc: dict, env) -> dict:
    sections = ("model", "train", "loss", "data")
    top = ("seed", "out_dir")
    for key, value in sorted(env.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        tail = key[len(ENV_PREFIX):].lower()
        try:
            parsed = yaml.safe_load(value)
        except yaml.YAMLError:
            parsed = value
        if "__" in tail:
            section, field_name = tail.split("__", 1)
            if section not in sections:
                raise ConfigError(f"{key}: unknown config section '{section}'")
            doc.setdefault(section, {})[field_name] = parsed
        elif tail in top:
            doc[tail] = parsed
        else:
            raise ConfigError(f"{key}: unknown top-level config key '{tail}'")
    return doc


def load_config(path=None, env=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional YAML file, environment overrides,
    then explicit overrides (highest precedence, e.g. CLI flags); an empty
    document yields all defaults."""
    doc = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config must be a mapping, got {type(loaded).__name__}")
        doc = loaded
    doc = _apply_env(doc, os.environ if env is None else env)
    for key, value in (overrides or {}).items():
        if isinstance(value, dict):
            section = doc.setdefault(key, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section '{key}' must be a mapping")
            section.update(value)
        else:
            doc[key] = value
    return build_config(doc)


def build_config(doc: dict) -> RunConfig:
    valid_top = ("model", "train", "loss", "data", "seed", "out_dir")
    unknown = [k for k in doc if k not in valid_top]
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}; valid keys: {list(valid_top)}")
    for section in ("model", "train", "loss", "data"):
        if section in doc and not isinstance(doc[section], dict):
            raise ConfigError(f"section '{section}' must be a mapping")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    train_raw = doc.get("train", {})
    if "seed" in train_raw:
        raise ConfigError("train.seed is derived from the top-level seed; set 'seed' instead")
    # RunConfig.__post_init__ copies the top-level seed into the train section.
    return RunConfig(
        model=_coerce_section(ModelConfig, doc.get("model", {}), "model"),
        train=_coerce_section(TrainConfig, train_raw, "train", banned=("seed",)),
        loss=_coerce_section(LossWeights, doc.get("loss", {}), "loss"),
        data=_coerce_section(DataConfig, doc.get("data", {}), "data"),
        seed=seed,
        out_dir=str(doc.get("out_dir", "runs/default")),
    )


def build_dataset(config: RunConfig):
    """Materialize the dataset a RunConfig describes; sprites derive their
    seed from the master seed so one knob reproduces the whole run."""
    data = config.data
    if data.source == "sprites":
        spec = SpriteSpec(image_size=config.model.image_size,
                          attributes=data.resolved_attributes, jitter=data.jitter)
        return SpriteDataset(spec, n_images=data.n_images,
                             seed=derive_seed(config.seed, "data"))
    return load_celeba(data.image_dir, data.attr_file,
                       chosen_attrs=data.resolved_attributes,
                       image_size=config.model.image_size,
                       partition_file=data.partition_file)


def write_manifest(out_dir, config: RunConfig, command: str) -> str:
    """Record what is about to run; written before any compute so a crashed
    run is still reconstructible. The timestamp is the only field excluded
    from reproducibility comparisons."""
    try:
        from importlib.metadata import version
        pkg_version = version("attrswap")
    except Exception:
        pkg_version = "unknown"
    manifest = {"command": command, "config": config.to_dict(),
                "seed": config.seed, "version": pkg_version,
                "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return path
