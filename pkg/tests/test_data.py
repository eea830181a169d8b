"""Shape-world data layer: taxonomy geometry, rendering, augmentation, splits."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refgame.data.augment import (AugmentConfig, augment, augment_batch,
                                  gaussian_blur, gaussian_kernel)
from refgame.data.render import RenderConfig, gen_blob, render_sample
from refgame.data.splits import (BLOB_LABEL, DatasetManifest, SplitCounts,
                                 make_splits, realize_split)
from refgame.data.taxonomy import Taxonomy, TaxonomyConfig, build_taxonomy
from refgame.errors import ConfigError, DataError
from refgame.seeding import derive_rng

# ---------------------------------------------------------------------------
# taxonomy


def test_default_taxonomy_counts():
    tax = build_taxonomy()
    assert len(tax.train_categories) == 24   # 4 shapes x 2 fills x 3 colors
    assert len(tax.holdout_categories) == 8  # 2 shapes x 2 fills x 2 colors
    assert [c.leaf_id for c in tax.categories] == list(range(32))
    assert all(not c.holdout for c in tax.categories[:24])
    assert all(c.holdout for c in tax.categories[24:])


def test_taxonomy_leaf_depths():
    tax = build_taxonomy()
    for cat in tax.categories:
        node = tax.leaf_node[cat.leaf_id]
        depth = 0
        while tax.parent[node] != -1:
            node = tax.parent[node]
            depth += 1
        assert depth == 3  # root -> shape -> fill -> leaf


def test_path_similarity_levels():
    # shared fill node: 2 edges; shared shape only: 4; different shape: 6
    tax = build_taxonomy()
    by_attrs = {(c.shape, c.fill, c.color): c.leaf_id for c in tax.categories}
    same_fill = (by_attrs[("circle", "solid", "red")],
                 by_attrs[("circle", "solid", "green")])
    same_shape = (by_attrs[("circle", "solid", "red")],
                  by_attrs[("circle", "outline", "red")])
    diff_shape = (by_attrs[("circle", "solid", "red")],
                  by_attrs[("square", "solid", "red")])
    assert tax.path_length(*same_fill) == 2
    assert tax.path_length(*same_shape) == 4
    assert tax.path_length(*diff_shape) == 6
    assert tax.path_similarity(*same_fill) == pytest.approx(1 / 3)
    assert tax.path_similarity(*same_shape) == pytest.approx(1 / 5)
    assert tax.path_similarity(*diff_shape) == pytest.approx(1 / 7)
    assert tax.path_similarity(same_fill[0], same_fill[0]) == 1.0


def test_similarity_matrix_properties():
    tax = build_taxonomy()
    S = tax.leaf_similarity_matrix()
    assert S.shape == (32, 32)
    np.testing.assert_array_equal(np.diag(S), np.ones(32))
    np.testing.assert_array_equal(S, S.T)
    assert S.min() >= 1 / 7
    # off-diagonal values only ever take the three tree-distance levels
    off = S[~np.eye(32, dtype=bool)]
    assert set(np.round(off, 12)) == {round(1 / 3, 12), round(1 / 5, 12),
                                      round(1 / 7, 12)}


def test_taxonomy_config_validation():
    with pytest.raises(ConfigError):
        TaxonomyConfig(train_shapes=("hexagon",)).validate()
    with pytest.raises(ConfigError):
        TaxonomyConfig(train_shapes=(), holdout_shapes=("star",)).validate()
    with pytest.raises(ConfigError):
        # overlap between train and holdout shapes
        TaxonomyConfig(train_shapes=("circle", "square", "triangle", "cross"),
                       holdout_shapes=("circle",)).validate()
    with pytest.raises(ConfigError):
        TaxonomyConfig(train_colors=("red", "red", "green")).validate()


def test_taxonomy_roundtrip():
    cfg = TaxonomyConfig()
    assert TaxonomyConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------------------
# rendering


def test_render_deterministic_and_in_range():
    tax = build_taxonomy()
    cat = tax.categories[0]
    img1 = render_sample(cat, derive_rng(3, "r"), RenderConfig())
    img2 = render_sample(cat, derive_rng(3, "r"), RenderConfig())
    assert img1.shape == (3, 32, 32)
    assert img1.dtype == np.float64
    np.testing.assert_array_equal(img1, img2)
    assert img1.min() >= 0.0 and img1.max() <= 1.0
    img3 = render_sample(cat, derive_rng(4, "r"), RenderConfig())
    assert not np.array_equal(img1, img3)


def test_render_every_category_draws_foreground():
    # every shape/fill combination must put visible pixels on the canvas
    tax = build_taxonomy()
    cfg = RenderConfig(noise_std=0.0)
    for cat in tax.categories:
        img = render_sample(cat, derive_rng(11, "fg", cat.leaf_id), cfg)
        corner = img[:, 0, 0]
        center_region = img[:, 8:24, 8:24]
        spread = np.abs(center_region - corner[:, None, None]).max()
        assert spread > 0.05, f"{cat.name} rendered no visible foreground"


def test_render_hue_shift_changes_image():
    tax = build_taxonomy()
    cat = tax.categories[0]
    base = render_sample(cat, derive_rng(5, "h"), RenderConfig())
    shifted = render_sample(cat, derive_rng(5, "h"), RenderConfig(hue_shift=0.45))
    assert not np.array_equal(base, shifted)


def test_render_config_validation():
    with pytest.raises(ConfigError):
        RenderConfig(image_size=0).validate()
    with pytest.raises(ConfigError):
        RenderConfig(background="neon").validate()
    with pytest.raises(ConfigError):
        RenderConfig(size_interval=(0.8, 0.4)).validate()


def test_gen_blob_stats():
    blob = gen_blob(derive_rng(0, "blob"), 32)
    assert blob.shape == (3, 32, 32)
    # standard normal noise, not clipped to [0, 1]
    assert blob.min() < -1.0 and blob.max() > 1.0
    assert abs(blob.mean()) < 0.1
    assert abs(blob.std() - 1.0) < 0.1


# ---------------------------------------------------------------------------
# augmentation


def _batch(n=4, size=16, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.1, 0.9, size=(n, 3, size, size))


def test_augment_disabled_is_identity():
    x = _batch()
    cfg = AugmentConfig(crop=False, color=False, blur=False)
    out = augment_batch(x, cfg, derive_rng(0, "a"))
    np.testing.assert_array_equal(out, x)
    assert out is not x


def test_augment_deterministic_and_pure():
    x = _batch()
    before = x.copy()
    cfg = AugmentConfig()
    out1 = augment_batch(x, cfg, derive_rng(9, "aug"))
    out2 = augment_batch(x, cfg, derive_rng(9, "aug"))
    np.testing.assert_array_equal(out1, out2)
    np.testing.assert_array_equal(x, before)  # input untouched
    assert not np.array_equal(out1, x)
    assert out1.min() >= 0.0 and out1.max() <= 1.0


def test_two_draws_differ():
    x = _batch()
    cfg = AugmentConfig()
    rng = derive_rng(10, "aug")
    v1 = augment_batch(x, cfg, rng)
    v2 = augment_batch(x, cfg, rng)
    assert not np.array_equal(v1, v2)


def test_blur_matches_naive_2d_convolution():
    rng = np.random.default_rng(7)
    img = rng.uniform(size=(3, 12, 12))
    sigma = 1.3
    k = gaussian_kernel(sigma)
    assert k.sum() == pytest.approx(1.0, abs=1e-12)
    r = len(k) // 2
    padded = np.pad(img, ((0, 0), (r, r), (r, r)), mode="reflect")
    k2d = np.outer(k, k)
    naive = np.zeros_like(img)
    for c in range(3):
        for i in range(12):
            for j in range(12):
                naive[c, i, j] = np.sum(padded[c, i:i + 2 * r + 1,
                                               j:j + 2 * r + 1] * k2d)
    np.testing.assert_allclose(gaussian_blur(img, sigma), naive, atol=1e-12)


def test_blob_rejected_by_single_augment():
    with pytest.raises(DataError):
        augment(np.zeros((3, 8, 8)), AugmentConfig(), derive_rng(0, "x"),
                split="blob")


def test_augment_config_validation():
    with pytest.raises(ConfigError):
        AugmentConfig(crop_scale=(0.9, 0.2)).validate()
    with pytest.raises(ConfigError):
        AugmentConfig(blur_prob=1.5).validate()
    with pytest.raises(ConfigError):
        AugmentConfig(brightness=-0.1).validate()


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_augment_always_stays_in_unit_range(seed):
    x = _batch(n=2, size=12, seed=seed % 997)
    out = augment_batch(x, AugmentConfig(), derive_rng(seed, "prop"))
    assert out.shape == x.shape
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert np.isfinite(out).all()


# ---------------------------------------------------------------------------
# splits


SMALL_COUNTS = SplitCounts(train_per_category=2, val_per_category=1,
                           holdout_per_category=1, blob_count=6)


def test_make_splits_sizes_and_labels():
    manifest, ds = make_splits(seed=0, counts=SMALL_COUNTS,
                               render_config=RenderConfig(image_size=16))
    assert len(ds["train"]) == 48 and len(ds["val"]) == 24
    assert len(ds["holdout"]) == 8 and len(ds["blob"]) == 6
    assert set(ds["train"].labels) == set(range(24))
    assert set(ds["val"].labels) == set(range(24))
    assert set(ds["holdout"].labels) == set(range(24, 32))
    assert (ds["blob"].labels == BLOB_LABEL).all()
    # train is category-balanced
    assert (np.bincount(ds["train"].labels, minlength=24) == 2).all()


def test_sample_ids_globally_unique():
    manifest, ds = make_splits(seed=0, counts=SMALL_COUNTS,
                               render_config=RenderConfig(image_size=16))
    all_ids = np.concatenate([ds[k].sample_ids for k in ("train", "val",
                                                         "holdout", "blob")])
    assert len(np.unique(all_ids)) == len(all_ids)


def test_regeneration_is_bit_exact():
    m1, d1 = make_splits(seed=5, counts=SMALL_COUNTS,
                         render_config=RenderConfig(image_size=16))
    m2, d2 = make_splits(seed=5, counts=SMALL_COUNTS,
                         render_config=RenderConfig(image_size=16))
    assert m1.config_hash() == m2.config_hash()
    for name in ("train", "val", "holdout", "blob"):
        assert d1[name].checksum() == d2[name].checksum()
        np.testing.assert_array_equal(d1[name].images, d2[name].images)
    m3, d3 = make_splits(seed=6, counts=SMALL_COUNTS,
                         render_config=RenderConfig(image_size=16))
    assert d1["train"].checksum() != d3["train"].checksum()


def test_manifest_roundtrip_and_tamper_detection():
    manifest, _ = make_splits(seed=1, counts=SMALL_COUNTS,
                              render_config=RenderConfig(image_size=16))
    text = manifest.to_json()
    back = DatasetManifest.from_json(text)
    assert back.config_hash() == manifest.config_hash()
    assert back.to_json() == text
    tampered = text.replace('"seed": 1', '"seed": 2')
    with pytest.raises(DataError):
        DatasetManifest.from_json(tampered)


def test_realize_split_matches_make_splits():
    manifest, ds = make_splits(seed=2, counts=SMALL_COUNTS,
                               render_config=RenderConfig(image_size=16))
    again = realize_split(manifest, "val")
    np.testing.assert_array_equal(again.images, ds["val"].images)
    np.testing.assert_array_equal(again.labels, ds["val"].labels)


def test_realize_split_render_override_keeps_ids():
    manifest, ds = make_splits(seed=2, counts=SMALL_COUNTS,
                               render_config=RenderConfig(image_size=16))
    shifted = realize_split(manifest, "val",
                            render_override=RenderConfig(image_size=16,
                                                         hue_shift=0.4,
                                                         background="dark"))
    np.testing.assert_array_equal(shifted.sample_ids, ds["val"].sample_ids)
    np.testing.assert_array_equal(shifted.labels, ds["val"].labels)
    assert not np.array_equal(shifted.images, ds["val"].images)


def test_realize_unknown_split():
    manifest, _ = make_splits(seed=2, counts=SMALL_COUNTS,
                              render_config=RenderConfig(image_size=16))
    with pytest.raises(DataError):
        realize_split(manifest, "test")


def test_split_counts_validation():
    with pytest.raises(ConfigError):
        SplitCounts(train_per_category=0).validate()
    with pytest.raises(ConfigError):
        SplitCounts(blob_count=-1).validate()
