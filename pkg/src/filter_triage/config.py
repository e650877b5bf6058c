"""Experiment configuration: a strict, round-trippable YAML document.

Every section mirrors one stage of the pipeline.  Unknown keys anywhere are
errors, so typos fail loudly instead of silently running defaults.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .errors import FormatError


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise FormatError(f"unknown config keys in {where}: {sorted(unknown)}")


@dataclass
class DataConfig:
    format: str = "cifar10"          # cifar10 | cifar100 | internal | synthetic
    path: str = ""
    test_path: str = ""              # internal format only
    train_limit: int = 0             # 0 = use the full training split
    synthetic_train: int = 20000     # synthetic format only
    synthetic_test: int = 4000

    @staticmethod
    def from_dict(d: dict) -> "DataConfig":
        _check_keys(d, set(DataConfig.__dataclass_fields__), "dataset")
        cfg = DataConfig(**d)
        if cfg.format not in ("cifar10", "cifar100", "internal", "synthetic"):
            raise FormatError(f"unknown dataset format {cfg.format!r}")
        return cfg


@dataclass
class SplitConfig:
    ratio: float = 0.8
    stratified: bool = True

    @staticmethod
    def from_dict(d: dict) -> "SplitConfig":
        _check_keys(d, set(SplitConfig.__dataclass_fields__), "split")
        return SplitConfig(**d)


@dataclass
class DistortionConfig:
    kind: str = "awgn"
    sigma: float = 15.0
    seed: int = 99

    @staticmethod
    def from_dict(d: dict) -> "DistortionConfig":
        _check_keys(d, set(DistortionConfig.__dataclass_fields__), "distortion")
        return DistortionConfig(**d)


@dataclass
class RankingConfig:
    method: str = "assoc"            # assoc | nonassoc
    metric: str = "marginal"         # assoc EMD: marginal | exact
    pairs: int = 2000                # assoc: sampled training pairs
    capture: str = "post_relu"
    features: str = "pixels"         # nonassoc: pixels | ftm
    distance: str = "euclidean"      # nonassoc medoid metric: euclidean | hamming
    binarize: bool = False
    subsample: int = 1000            # nonassoc medoid pool cap

    @staticmethod
    def from_dict(d: dict) -> "RankingConfig":
        _check_keys(d, set(RankingConfig.__dataclass_fields__), "ranking")
        cfg = RankingConfig(**d)
        if cfg.method not in ("assoc", "nonassoc"):
            raise FormatError(f"unknown ranking method {cfg.method!r}")
        return cfg


@dataclass
class TrainingConfig:
    batch_size: int = 128
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 15

    @staticmethod
    def from_dict(d: dict) -> "TrainingConfig":
        _check_keys(d, set(TrainingConfig.__dataclass_fields__), "training")
        return TrainingConfig(**d)


@dataclass
class FinetuneSection:
    batch_size: int = 128
    learning_rate: float = 1e-4
    max_epochs: int = 200
    patience: int = 15
    freeze_classifier: bool = True
    val_fraction: float = 0.2

    @staticmethod
    def from_dict(d: dict) -> "FinetuneSection":
        _check_keys(d, set(FinetuneSection.__dataclass_fields__), "finetune")
        return FinetuneSection(**d)


@dataclass
class EvalConfig:
    test_limit: int = 0              # 0 = full test set
    heatmap_images: int = 20

    @staticmethod
    def from_dict(d: dict) -> "EvalConfig":
        _check_keys(d, set(EvalConfig.__dataclass_fields__), "evaluation")
        return EvalConfig(**d)


_TOP_KEYS = {"name", "seed", "architecture", "baseline_checkpoint", "dataset",
             "split", "distortion", "ranking", "layers", "fraction", "modes",
             "train_sizes", "seeds", "training", "finetune", "evaluation"}


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 7
    architecture: str = "cifar10-small"
    baseline_checkpoint: str = ""    # reuse instead of training when set
    dataset: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    distortion: DistortionConfig = field(default_factory=DistortionConfig)
    ranking: RankingConfig = field(default_factory=RankingConfig)
    layers: list[str] = field(default_factory=lambda: ["conv1", "conv2"])
    fraction: float = 0.25
    modes: list[str] = field(default_factory=lambda: ["most", "least", "all"])
    train_sizes: list[int] = field(default_factory=lambda: [1000, 4000])
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    training: TrainingConfig = field(default_factory=TrainingConfig)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        _check_keys(d, _TOP_KEYS, "top level")
        sections = {
            "dataset": DataConfig, "split": SplitConfig, "distortion": DistortionConfig,
            "ranking": RankingConfig, "training": TrainingConfig,
            "finetune": FinetuneSection, "evaluation": EvalConfig,
        }
        kwargs: dict = {}
        for key, value in d.items():
            if key in sections:
                if not isinstance(value, dict):
                    raise FormatError(f"config section {key!r} must be a mapping")
                kwargs[key] = sections[key].from_dict(value)
            else:
                kwargs[key] = value
        return ExperimentConfig(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True), "utf-8")


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text("utf-8"))
    except yaml.YAMLError as e:
        raise FormatError(f"{path}: not valid YAML: {e}") from e
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: config must be a mapping")
    return ExperimentConfig.from_dict(raw)
