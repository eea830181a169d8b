"""Procedural shape-world dataset: taxonomy, rendering, augmentation, splits."""

from .taxonomy import Category, Taxonomy, TaxonomyConfig, build_taxonomy
from .render import RenderConfig, gen_blob, render_sample
from .augment import AugmentConfig, augment, augment_batch
from .splits import Dataset, DatasetManifest, ImageSample, SplitCounts, make_splits, realize_split

__all__ = [
    "Category",
    "Taxonomy",
    "TaxonomyConfig",
    "build_taxonomy",
    "RenderConfig",
    "gen_blob",
    "render_sample",
    "AugmentConfig",
    "augment",
    "augment_batch",
    "Dataset",
    "DatasetManifest",
    "ImageSample",
    "SplitCounts",
    "make_splits",
    "realize_split",
]
