import dataclasses
import hashlib
import logging
import os
from dataclasses import dataclass, field
from typing import List

import numpy as np
import yaml

from .constants import internal_path
from .exceptions import ConfigError

logger = logging.getLogger("SurveyGraph")

THREADS_ENV = "SURVEYGRAPH_THREADS"

ABLATIONS = ["no_relation_matrix", "no_latent_learning", "no_llm", "no_rgsl"]
SWEEP_PARAMETERS = ["k_sim", "k_att", "lambda_deg"]
RANDOM_STREAMS = ["split", "masking", "init", "decoding", "warmup", "evaluation"]


@dataclass
class PretextConfig:
    batch_size: int = 16
    epochs: int = 20


@dataclass
class BimodalConfig:
    batch_size: int = 4
    epochs: int = 10


@dataclass
class SplitConfig:
    train: float = 0.70
    validation: float = 0.15
    test: float = 0.15


@dataclass
class LmConfig:
    n_blocks: int = 2
    d_lm: int = 128
    n_heads: int = 4
    max_positions: int = 1024
    warm_epochs: int = 3
    warm_lr: float = 1e-3
    warm_samples: int = 256
    max_new_tokens: int = 48
    decoding: str = "greedy"
    temperature: float = 1.0


@dataclass
class AblationConfig:
    no_relation_matrix: bool = False
    no_latent_learning: bool = False
    no_llm: bool = False
    no_rgsl: bool = False

    def enabled(self) -> List[str]:
        return [name for name in ABLATIONS if getattr(self, name)]


@dataclass
class EmbedderConfig:
    mode: str = "HASHING"
    vectors: str = ""


@dataclass
class RunConfig:
    seed: int = 0
    hidden_dim: int = 128
    embed_dim: int = 128
    rgcn_layers: int = 3
    k_sim: int = 5
    k_att: int = 20
    lr: float = 5e-5
    weight_decay: float = 5e-4
    lambda_deg: float = 0.1
    basis_threshold: int = 64
    num_bases: int = 16
    relation_vector_mode: str = "shared"
    relation_mean_axis: str = "row"
    relation_activation: str = "sigmoid"
    warm_start: bool = False
    topk_pooling: bool = False
    pretext: PretextConfig = field(default_factory=PretextConfig)
    bimodal: BimodalConfig = field(default_factory=BimodalConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    lm: LmConfig = field(default_factory=LmConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def check(self):
        for name in ["hidden_dim", "embed_dim", "rgcn_layers", "k_sim", "k_att", "num_bases"]:
            if getattr(self, name) < 1:
                raise ConfigError(name + " must be positive")
        for name in ["lr", "weight_decay", "lambda_deg"]:
            if getattr(self, name) < 0:
                raise ConfigError(name + " must not be negative")
        if self.lr == 0:
            raise ConfigError("lr must be positive")
        fractions = [self.split.train, self.split.validation, self.split.test]
        if any(f <= 0 for f in fractions):
            raise ConfigError("Split fractions must all be positive")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ConfigError("Split fractions must sum to 1, got " + str(sum(fractions)))
        if self.relation_vector_mode not in ("shared", "per-relation"):
            raise ConfigError("relation_vector_mode must be shared or per-relation")
        if self.relation_mean_axis not in ("row", "column"):
            raise ConfigError("relation_mean_axis must be row or column")
        if self.relation_activation not in ("sigmoid", "identity"):
            raise ConfigError("relation_activation must be sigmoid or identity")
        if self.embedder.mode.upper() not in ("HASHING", "PRECOMPUTED"):
            raise ConfigError("embedder mode must be HASHING or PRECOMPUTED")
        if self.lm.decoding not in ("greedy", "sample"):
            raise ConfigError("lm.decoding must be greedy or sample")
        if self.lm.temperature <= 0:
            raise ConfigError("lm.temperature must be positive")
        if self.lm.d_lm % self.lm.n_heads != 0:
            raise ConfigError("lm.d_lm must be a multiple of lm.n_heads")
        for section in (self.pretext, self.bimodal):
            if section.batch_size < 1 or section.epochs < 1:
                raise ConfigError("batch_size and epochs must be positive")
        return self


def _apply(target, values: dict, prefix: str):
    if not isinstance(values, dict):
        raise ConfigError("Config section " + (prefix or "root") + " must be a mapping")
    known = {f.name: f for f in dataclasses.fields(target)}
    for key, value in values.items():
        if key not in known:
            raise ConfigError("Unknown config key: " + prefix + str(key))
        current = getattr(target, key)
        if dataclasses.is_dataclass(current):
            _apply(current, value, prefix + key + ".")
            continue
        try:
            if isinstance(current, bool):
                if not isinstance(value, bool):
                    raise ValueError("expected true or false")
                converted = value
            else:
                converted = type(current)(value)
        except (TypeError, ValueError) as e:
            raise ConfigError("Bad value for " + prefix + key + ": " + str(e))
        logger.debug("  " + prefix + key + ": " + str(converted))
        setattr(target, key, converted)


def run_config_from_dict(values: dict) -> RunConfig:
    config = RunConfig()
    if values:
        _apply(config, values, "")
    return config.check()


def load_run_config(config_path=None) -> RunConfig:
    """Read a YAML run config; absent keys keep their defaults"""
    if config_path is None:
        config_path = internal_path("config", "run_config.yaml")
        if not os.path.exists(config_path):
            logger.info("No configuration file found, using defaults")
            return RunConfig()
    logger.debug("Loading configuration file: " + str(config_path))
    try:
        with open(config_path, "r") as config_file:
            values = yaml.safe_load(config_file)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError("Cannot read config " + str(config_path) + ": " + str(e))
    return run_config_from_dict(values or {})


def with_overrides(config: RunConfig, seed=None, ablations=None, **values) -> RunConfig:
    updated = run_config_from_dict(config.to_dict())
    if seed is not None:
        updated.seed = int(seed)
    for name in ablations or []:
        if name not in ABLATIONS:
            raise ConfigError(
                "Unknown ablation " + name + ", expected one of " + ", ".join(ABLATIONS)
            )
        setattr(updated.ablation, name, True)
    for key, value in values.items():
        _apply(updated, {key: value}, "")
    return updated.check()


def sub_seed(seed: int, stream: str) -> int:
    """Independent 63-bit seed for one named random stream of a run"""
    if stream not in RANDOM_STREAMS:
        raise ValueError("Unknown random stream " + stream)
    digest = hashlib.sha256((str(seed) + ":" + stream).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def stream_rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(sub_seed(seed, stream))


def configure_threads():
    threads = os.environ.get(THREADS_ENV)
    if not threads:
        return
    import torch

    try:
        torch.set_num_threads(int(threads))
    except ValueError:
        raise ConfigError(THREADS_ENV + " must be an integer, got " + threads)
    logger.debug("Torch threads: " + threads)
