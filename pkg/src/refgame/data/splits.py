"""Dataset assembly: named splits, manifest, bit-exact regeneration.

A dataset is described entirely by (seed, taxonomy config, render config,
split counts).  Every sample owns a global integer id, and its pixels are
drawn from a generator derived from (seed, "sample", id), so any split can
be regenerated independently and always reproduces the same bytes.  The
manifest records this description plus per-split SHA-256 checksums of the
realized pixel arrays.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DataError
from ..seeding import derive_rng
from .render import RenderConfig, gen_blob, render_sample
from .taxonomy import Taxonomy, TaxonomyConfig, build_taxonomy

BLOB_LABEL = -1

SPLIT_ORDER = ("train", "val", "holdout", "blob")


@dataclass(frozen=True)
class SplitCounts:
    train_per_category: int = 200
    val_per_category: int = 32
    holdout_per_category: int = 32
    blob_count: int = 1024

    def validate(self) -> None:
        for name, n in (("train_per_category", self.train_per_category),
                        ("val_per_category", self.val_per_category),
                        ("holdout_per_category", self.holdout_per_category),
                        ("blob_count", self.blob_count)):
            if n < 1:
                raise ConfigError(f"{name} must be >= 1, got {n}")

    def to_dict(self) -> dict:
        return {
            "train_per_category": self.train_per_category,
            "val_per_category": self.val_per_category,
            "holdout_per_category": self.holdout_per_category,
            "blob_count": self.blob_count,
        }

    @staticmethod
    def from_dict(d: dict) -> "SplitCounts":
        return SplitCounts(
            train_per_category=int(d["train_per_category"]),
            val_per_category=int(d["val_per_category"]),
            holdout_per_category=int(d["holdout_per_category"]),
            blob_count=int(d["blob_count"]),
        )


@dataclass(frozen=True)
class ImageSample:
    pixels: np.ndarray
    category_id: int
    sample_id: int
    split: str


@dataclass
class Dataset:
    """Stacked split: images (N, 3, S, S) float64, labels and ids (N,) int64."""

    split: str
    images: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray

    def __len__(self) -> int:
        return self.images.shape[0]

    def sample(self, i: int) -> ImageSample:
        return ImageSample(pixels=self.images[i], category_id=int(self.labels[i]),
                           sample_id=int(self.sample_ids[i]), split=self.split)

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(split=self.split, images=self.images[indices],
                       labels=self.labels[indices], sample_ids=self.sample_ids[indices])

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.images).tobytes()).hexdigest()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"images": self.images, "labels": self.labels, "sample_ids": self.sample_ids}


@dataclass
class DatasetManifest:
    """Everything needed to regenerate the dataset, plus integrity checksums."""

    seed: int
    taxonomy_config: TaxonomyConfig
    render_config: RenderConfig
    counts: SplitCounts
    splits: dict[str, dict] = field(default_factory=dict)
    checksums: dict[str, str] = field(default_factory=dict)

    def config_hash(self) -> str:
        payload = json.dumps({
            "seed": self.seed,
            "taxonomy": self.taxonomy_config.to_dict(),
            "render": self.render_config.to_dict(),
            "counts": self.counts.to_dict(),
        }, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed,
            "taxonomy": self.taxonomy_config.to_dict(),
            "render": self.render_config.to_dict(),
            "counts": self.counts.to_dict(),
            "splits": self.splits,
            "checksums": self.checksums,
            "config_hash": self.config_hash(),
        }, sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "DatasetManifest":
        d = json.loads(text)
        manifest = DatasetManifest(
            seed=int(d["seed"]),
            taxonomy_config=TaxonomyConfig.from_dict(d["taxonomy"]),
            render_config=RenderConfig.from_dict(d["render"]),
            counts=SplitCounts.from_dict(d["counts"]),
            splits=d["splits"],
            checksums=d["checksums"],
        )
        if d.get("config_hash") != manifest.config_hash():
            raise DataError("manifest config_hash does not match its contents")
        return manifest


def _split_plan(taxonomy: Taxonomy, counts: SplitCounts) -> dict[str, dict]:
    """Lay out sample-id ranges for each split in a fixed order."""
    train_ids = [c.leaf_id for c in taxonomy.train_categories]
    holdout_ids = [c.leaf_id for c in taxonomy.holdout_categories]
    plan: dict[str, dict] = {}
    next_id = 0
    for name, cat_ids, per in (
        ("train", train_ids, counts.train_per_category),
        ("val", train_ids, counts.val_per_category),
        ("holdout", holdout_ids, counts.holdout_per_category),
    ):
        n = len(cat_ids) * per
        plan[name] = {"kind": "categories", "category_ids": cat_ids,
                      "per_category": per, "first_sample_id": next_id, "count": n}
        next_id += n
    plan["blob"] = {"kind": "blob", "first_sample_id": next_id, "count": counts.blob_count}
    return plan


def realize_split(manifest: DatasetManifest, name: str,
                  render_override: RenderConfig | None = None) -> Dataset:
    """Materialize one split from its manifest entry.

    ``render_override`` swaps the render parameters (e.g. shifted hues for
    transfer evaluation) while keeping sample ids, and therefore the
    per-sample generators, identical to the canonical split.
    """
    if name not in manifest.splits:
        raise DataError(f"unknown split {name!r}; have {sorted(manifest.splits)}")
    entry = manifest.splits[name]
    render_cfg = render_override if render_override is not None else manifest.render_config
    render_cfg.validate()
    size = render_cfg.image_size
    count = entry["count"]
    first = entry["first_sample_id"]
    images = np.empty((count, 3, size, size), dtype=np.float64)
    labels = np.empty(count, dtype=np.int64)
    sample_ids = np.arange(first, first + count, dtype=np.int64)

    if entry["kind"] == "blob":
        for i in range(count):
            rng = derive_rng(manifest.seed, "sample", int(sample_ids[i]))
            images[i] = gen_blob(rng, size)
        labels[:] = BLOB_LABEL
        return Dataset(split=name, images=images, labels=labels, sample_ids=sample_ids)

    taxonomy = build_taxonomy(manifest.taxonomy_config)
    cat_ids = entry["category_ids"]
    for i in range(count):
        category = taxonomy.category(cat_ids[i % len(cat_ids)])
        rng = derive_rng(manifest.seed, "sample", int(sample_ids[i]))
        images[i] = render_sample(category, rng, render_cfg)
        labels[i] = category.leaf_id
    return Dataset(split=name, images=images, labels=labels, sample_ids=sample_ids)


def make_splits(seed: int,
                taxonomy_config: TaxonomyConfig | None = None,
                render_config: RenderConfig | None = None,
                counts: SplitCounts | None = None,
                ) -> tuple[DatasetManifest, dict[str, Dataset]]:
    """Build the manifest and realize all four splits.

    Splits never share sample ids; train and val use the training leaves,
    holdout uses the held-out leaves, and blob is pure noise.
    """
    tax_cfg = taxonomy_config if taxonomy_config is not None else TaxonomyConfig()
    render_cfg = render_config if render_config is not None else RenderConfig()
    cts = counts if counts is not None else SplitCounts()
    cts.validate()
    render_cfg.validate()
    taxonomy = build_taxonomy(tax_cfg)

    manifest = DatasetManifest(seed=seed, taxonomy_config=tax_cfg,
                               render_config=render_cfg, counts=cts)
    manifest.splits = _split_plan(taxonomy, cts)
    datasets = {name: realize_split(manifest, name) for name in SPLIT_ORDER}
    manifest.checksums = {name: ds.checksum() for name, ds in datasets.items()}
    return manifest, datasets
