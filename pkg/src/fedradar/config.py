"""Declarative experiment configuration with study-faithful defaults.

A config file is plain JSON with four sections (dataset, model,
training, output). Defaults are the reference settings: 5 clients, 150
communication rounds, 1 local epoch, batch size 32, Adam at 0.001,
recall target 0.99, minimum SINR 20 dB. Every run writes its effective
config next to its outputs so results are self-describing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

from .dataset import DEFAULT_MIXTURES, DEFAULT_POWER_JITTER_DB
from .frames import ChannelParams
from .model import ResidualCnnConfig

__all__ = ["DatasetSection", "TrainingSection", "OutputSection", "ExperimentConfig"]

PAPER_SCALE_FRAMES_PER_SUBCAT = 500


@dataclass
class DatasetSection:
    num_clients: int = 5
    frames_per_subcat: int = 50
    mixtures: tuple = DEFAULT_MIXTURES
    power_jitter_db: tuple = DEFAULT_POWER_JITTER_DB
    sinr_db_range: tuple[float, float] = (20.0, 26.0)
    master_seed: int = 7
    channel: ChannelParams = field(default_factory=ChannelParams)


@dataclass
class TrainingSection:
    paradigm: str = "fedper"
    rounds: int = 150
    local_epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.001
    target_recall: float = 0.99
    bytes_per_param: int = 4
    seed: int = 1


@dataclass
class OutputSection:
    save_checkpoints: bool = True
    write_timing: bool = False  # wall times are not reproducible; opt in


@dataclass
class ExperimentConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ResidualCnnConfig = field(default_factory=ResidualCnnConfig)
    training: TrainingSection = field(default_factory=TrainingSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> None:
        self.model.validate()
        ds = self.dataset
        if len(ds.mixtures) != ds.num_clients or len(ds.power_jitter_db) != ds.num_clients:
            raise ValueError("mixtures and power_jitter_db must have one entry per client")
        if ds.sinr_db_range[0] < 20.0:
            raise ValueError("minimum SINR must stay at or above the 20 dB compliance floor")
        if self.training.paradigm not in ("local_only", "centralized", "fedavg", "fedper"):
            raise ValueError(f"unknown paradigm {self.training.paradigm!r}")
        if tuple(ds.channel.image_size) != tuple(self.model.input_size):
            raise ValueError(
                f"dataset image_size {ds.channel.image_size} != model input_size {self.model.input_size}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        cfg = cls()
        dataset = d.get("dataset", {})
        if "channel" in dataset:
            channel = ChannelParams(**_tupled(dataset["channel"], ("image_size", "comm_power_db_range")))
        else:
            channel = ChannelParams()
        cfg.dataset = DatasetSection(
            **{k: _seq(v) for k, v in dataset.items() if k != "channel"}, channel=channel
        )
        if "model" in d:
            cfg.model = ResidualCnnConfig(**_tupled(d["model"], ("input_size", "block_channels")))
        if "training" in d:
            cfg.training = TrainingSection(**d["training"])
        if "output" in d:
            cfg.output = OutputSection(**d["output"])
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())


def _tupled(d: dict, keys) -> dict:
    out = dict(d)
    for k in keys:
        if k in out and isinstance(out[k], list):
            out[k] = tuple(out[k])
    return out


def _seq(v):
    if isinstance(v, list):
        return tuple(tuple(x) if isinstance(x, list) else x for x in v)
    return v
