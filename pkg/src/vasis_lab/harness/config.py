"""Experiment configuration: a JSON tree of dataclasses with strict key checking."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from ..data_io import SyntheticSpec
from ..networks import DiscriminatorSpec, GeneratorSpec
from ..training import TrainRecipe
from ..vasis import VariantConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    base_channels: int = 32
    num_blocks: int = 4
    init_res: int = 4
    latent_dim: int = 64
    hidden: int = 64


@dataclass(frozen=True)
class DiscriminatorConfig:
    kind: str = "patch_multiscale"
    scales: int = 2
    base_channels: int = 32
    depth: int = 3


@dataclass(frozen=True)
class EvalConfig:
    every: int = 50
    num_samples: int = 32
    heldout_count: int = 32
    checkpoint_every: int = 500
    log_every: int = 10


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: SyntheticSpec = field(default_factory=SyntheticSpec)
    dataset_dir: str = ""
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    variant: VariantConfig = field(default_factory=VariantConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    recipe: TrainRecipe = field(default_factory=TrainRecipe)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    output_dir: str = "runs/default"

    def __post_init__(self):
        res = self.generator.init_res * 2 ** self.generator.num_blocks
        if res != self.dataset.resolution:
            raise ConfigError(
                f"generator resolution {res} does not match dataset resolution {self.dataset.resolution}"
            )

    # -- derived specs -----------------------------------------------------
    def gspec(self, variant=None):
        return GeneratorSpec(num_classes=self.dataset.num_classes,
                             variant=variant or self.variant,
                             **dataclasses.asdict(self.generator))

    def dspec(self):
        return DiscriminatorSpec(num_classes=self.dataset.num_classes,
                                 **dataclasses.asdict(self.discriminator))

    def heldout_spec(self):
        return dataclasses.replace(self.dataset, seed=self.dataset.seed + 1_000_003,
                                   count=self.eval.heldout_count)

    @property
    def data_root(self):
        return Path(self.dataset_dir) if self.dataset_dir else Path(self.output_dir) / "dataset"

    # -- serialisation -----------------------------------------------------
    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def config_hash(self):
        """SHA-256 (first 16 hex) of the canonical config, ignoring ``output_dir``."""
        data = self.to_dict()
        data.pop("output_dir")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_dict(cls, data):
        return _build(cls, data, "")

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def save(self, path):
        Path(path).write_text(self.to_json())


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for key, value in data.items():
        typ = hints[key]
        if dataclasses.is_dataclass(typ):
            kwargs[key] = _build(typ, value, f"{where}{key}.")
        elif isinstance(value, list):
            kwargs[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where.rstrip('.') or 'config'}: {exc}") from None
