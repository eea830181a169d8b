"""Run configuration: one JSON document drives every command.

The schema is the nested union of the module configs.  Users may supply
any subset of keys; missing values fall back to defaults, unknown keys
are rejected with their full path, and the merged effective config is
echoed into every report so no value is ever silent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .agents import ChannelConfig, EncoderConfig
from .data.augment import AugmentConfig
from .data.render import RenderConfig
from .data.splits import SplitCounts
from .data.taxonomy import TaxonomyConfig
from .errors import ConfigError
from .game import TrainConfig
from .probe import ProbeConfig

DEFAULT_VARIANTS = ("game+aug", "game-aug+shared", "simclr")


def parse_variant(slug: str) -> tuple[str, bool, bool]:
    """Slug to (model kind, augmentations, shared encoder).

    Game slugs read ``game{+|-}aug[+shared]``; the contrastive baseline is
    plain ``simclr``.
    """
    if slug == "simclr":
        return "simclr", True, False
    rest = None
    if slug.startswith("game+aug"):
        aug, rest = True, slug[len("game+aug"):]
    elif slug.startswith("game-aug"):
        aug, rest = False, slug[len("game-aug"):]
    if rest == "":
        return "game", aug, False
    if rest == "+shared":
        return "game", aug, True
    raise ConfigError(f"unknown variant {slug!r}; expected game{{+|-}}aug[+shared] or simclr")


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    precision: str = "float64"

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "precision": self.precision}

    @staticmethod
    def from_dict(d: dict) -> "TrainSection":
        return TrainSection(epochs=int(d["epochs"]), batch_size=int(d["batch_size"]),
                            learning_rate=float(d["learning_rate"]),
                            precision=str(d["precision"]))


@dataclass(frozen=True)
class EvalSection:
    n_candidates: int = 32
    games: int = 2048
    blob_games: int = 1024

    def validate(self) -> None:
        if self.n_candidates < 2:
            raise ConfigError(f"eval n_candidates must be >= 2, got {self.n_candidates}")
        if self.games < 1 or self.blob_games < 1:
            raise ConfigError("eval games counts must be >= 1")

    def to_dict(self) -> dict:
        return {"n_candidates": self.n_candidates, "games": self.games,
                "blob_games": self.blob_games}

    @staticmethod
    def from_dict(d: dict) -> "EvalSection":
        return EvalSection(n_candidates=int(d["n_candidates"]), games=int(d["games"]),
                           blob_games=int(d["blob_games"]))


@dataclass(frozen=True)
class AnalysisSection:
    permutations: int = 999
    alpha: float = 0.01
    pair_cap: int = 2_000_000

    def validate(self) -> None:
        if self.permutations < 1:
            raise ConfigError(f"permutations must be >= 1, got {self.permutations}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.pair_cap < 1:
            raise ConfigError(f"pair_cap must be >= 1, got {self.pair_cap}")

    def to_dict(self) -> dict:
        return {"permutations": self.permutations, "alpha": self.alpha,
                "pair_cap": self.pair_cap}

    @staticmethod
    def from_dict(d: dict) -> "AnalysisSection":
        return AnalysisSection(permutations=int(d["permutations"]), alpha=float(d["alpha"]),
                               pair_cap=int(d["pair_cap"]))


@dataclass(frozen=True)
class ProbeSection:
    epochs: int = 100
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    batch_size: int = 64
    transfer_hue_shift: float = 0.45
    transfer_background: str = "dark"

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(epochs=self.epochs, learning_rate=self.learning_rate,
                           weight_decay=self.weight_decay, batch_size=self.batch_size)

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "learning_rate": self.learning_rate,
                "weight_decay": self.weight_decay, "batch_size": self.batch_size,
                "transfer_hue_shift": self.transfer_hue_shift,
                "transfer_background": self.transfer_background}

    @staticmethod
    def from_dict(d: dict) -> "ProbeSection":
        return ProbeSection(epochs=int(d["epochs"]), learning_rate=float(d["learning_rate"]),
                            weight_decay=float(d["weight_decay"]), batch_size=int(d["batch_size"]),
                            transfer_hue_shift=float(d["transfer_hue_shift"]),
                            transfer_background=str(d["transfer_background"]))


@dataclass(frozen=True)
class RunConfig:
    run_id: str = "run"
    seed: int = 0
    taxonomy: TaxonomyConfig = field(default_factory=TaxonomyConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    counts: SplitCounts = field(default_factory=SplitCounts)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainSection = field(default_factory=TrainSection)
    variants: tuple[str, ...] = DEFAULT_VARIANTS
    eval: EvalSection = field(default_factory=EvalSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    probe: ProbeSection = field(default_factory=ProbeSection)

    def validate(self) -> None:
        if not self.run_id:
            raise ConfigError("run_id must be non-empty")
        self.taxonomy.validate()
        self.render.validate()
        self.counts.validate()
        self.encoder.validate()
        self.channel.validate()
        self.augment.validate()
        self.eval.validate()
        self.analysis.validate()
        self.probe.probe_config().validate()
        if not self.variants:
            raise ConfigError("variant matrix must list at least one variant")
        for slug in self.variants:
            parse_variant(slug)
        # Exercise the full TrainConfig validation for each variant.
        for slug in self.variants:
            self.train_config(slug).validate()

    def train_config(self, variant: str, seed: int | None = None) -> TrainConfig:
        model, augmentations, shared = parse_variant(variant)
        return TrainConfig(
            model=model,
            augmentations=augmentations,
            shared_encoder=shared,
            epochs=self.train.epochs,
            batch_size=self.train.batch_size,
            learning_rate=self.train.learning_rate,
            seed=self.seed if seed is None else seed,
            precision=self.train.precision,
            encoder=self.encoder,
            channel=self.channel,
            augment=self.augment,
        )

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "seed": self.seed,
            "data": {
                "taxonomy": self.taxonomy.to_dict(),
                "render": self.render.to_dict(),
                "counts": self.counts.to_dict(),
            },
            "encoder": self.encoder.to_dict(),
            "channel": self.channel.to_dict(),
            "augment": self.augment.to_dict(),
            "train": self.train.to_dict(),
            "variants": list(self.variants),
            "eval": self.eval.to_dict(),
            "analysis": self.analysis.to_dict(),
            "probe": self.probe.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        merged = merge_config(RunConfig().to_dict(), d)
        cfg = RunConfig(
            run_id=str(merged["run_id"]),
            seed=int(merged["seed"]),
            taxonomy=TaxonomyConfig.from_dict(merged["data"]["taxonomy"]),
            render=RenderConfig.from_dict(merged["data"]["render"]),
            counts=SplitCounts.from_dict(merged["data"]["counts"]),
            encoder=EncoderConfig.from_dict(merged["encoder"]),
            channel=ChannelConfig.from_dict(merged["channel"]),
            augment=AugmentConfig.from_dict(merged["augment"]),
            train=TrainSection.from_dict(merged["train"]),
            variants=tuple(str(v) for v in merged["variants"]),
            eval=EvalSection.from_dict(merged["eval"]),
            analysis=AnalysisSection.from_dict(merged["analysis"]),
            probe=ProbeSection.from_dict(merged["probe"]),
        )
        cfg.validate()
        return cfg

    @staticmethod
    def load(path: str | Path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {p} must hold a JSON object")
        return RunConfig.from_dict(data)


def merge_config(defaults: dict, override: dict, path: str = "") -> dict:
    """Deep-merge ``override`` into ``defaults``; paths not in the schema fail."""
    out = dict(defaults)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = merge_config(defaults[key], value, where + ".")
        else:
            out[key] = value
    return out
