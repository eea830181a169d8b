"""Category taxonomy for the shape world.

Categories live at the leaves of a balanced three-level tree:
shape kind -> fill style -> colour family.  The tree carries two kinds of
branches: ``train`` branches, whose leaves populate the training and
validation splits, and ``holdout`` branches built from shape kinds never
seen during training.  Leaf-to-leaf similarity is measured on this tree as
1 / (1 + path length), the same scoring later used to ask whether symbols
cluster nearby categories.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ConfigError

# Hue intervals (in turns) for the colour families.  Red straddles the
# wrap-around point, so its interval is stored un-wrapped and sampled mod 1.
COLOR_FAMILIES: dict[str, tuple[float, float]] = {
    "red": (0.96, 1.04),
    "green": (0.29, 0.37),
    "blue": (0.58, 0.66),
    "yellow": (0.12, 0.18),
}

SHAPE_KINDS = ("circle", "square", "triangle", "cross", "star", "ring")
FILL_STYLES = ("solid", "outline", "striped")


@dataclass(frozen=True)
class Category:
    """One leaf of the taxonomy: everything the renderer needs."""

    leaf_id: int
    name: str
    shape: str
    fill: str
    color: str
    hue_interval: tuple[float, float]
    holdout: bool

    def to_dict(self) -> dict:
        return {
            "leaf_id": self.leaf_id,
            "name": self.name,
            "shape": self.shape,
            "fill": self.fill,
            "color": self.color,
            "hue_interval": list(self.hue_interval),
            "holdout": self.holdout,
        }

    @staticmethod
    def from_dict(d: dict) -> "Category":
        return Category(
            leaf_id=int(d["leaf_id"]),
            name=str(d["name"]),
            shape=str(d["shape"]),
            fill=str(d["fill"]),
            color=str(d["color"]),
            hue_interval=(float(d["hue_interval"][0]), float(d["hue_interval"][1])),
            holdout=bool(d["holdout"]),
        )


@dataclass(frozen=True)
class TaxonomyConfig:
    """Which branches the tree grows.

    Holdout shapes must be disjoint from training shapes; the resulting
    leaves are reserved for the generalization split.
    """

    train_shapes: tuple[str, ...] = ("circle", "square", "triangle", "cross")
    train_fills: tuple[str, ...] = ("solid", "outline")
    train_colors: tuple[str, ...] = ("red", "green", "blue")
    holdout_shapes: tuple[str, ...] = ("star", "ring")
    holdout_fills: tuple[str, ...] = ("solid", "outline")
    holdout_colors: tuple[str, ...] = ("red", "blue")

    def validate(self) -> None:
        for group, pool in (
            (self.train_shapes, SHAPE_KINDS),
            (self.holdout_shapes, SHAPE_KINDS),
            (self.train_fills, FILL_STYLES),
            (self.holdout_fills, FILL_STYLES),
            (self.train_colors, COLOR_FAMILIES),
            (self.holdout_colors, COLOR_FAMILIES),
        ):
            for name in group:
                if name not in pool:
                    raise ConfigError(f"unknown taxonomy element {name!r}")
        if not self.train_shapes or not self.train_fills or not self.train_colors:
            raise ConfigError("taxonomy needs at least one train shape, fill and color")
        overlap = set(self.train_shapes) & set(self.holdout_shapes)
        if overlap:
            raise ConfigError(f"holdout shapes overlap training shapes: {sorted(overlap)}")
        for group in (self.train_shapes, self.train_fills, self.train_colors,
                      self.holdout_shapes, self.holdout_fills, self.holdout_colors):
            if len(set(group)) != len(group):
                raise ConfigError("taxonomy branch lists must not repeat elements")
        n_train = len(self.train_shapes) * len(self.train_fills) * len(self.train_colors)
        if n_train < 8:
            raise ConfigError(f"taxonomy must have at least 8 training leaves, got {n_train}")

    def to_dict(self) -> dict:
        return {
            "train_shapes": list(self.train_shapes),
            "train_fills": list(self.train_fills),
            "train_colors": list(self.train_colors),
            "holdout_shapes": list(self.holdout_shapes),
            "holdout_fills": list(self.holdout_fills),
            "holdout_colors": list(self.holdout_colors),
        }

    @staticmethod
    def from_dict(d: dict) -> "TaxonomyConfig":
        return TaxonomyConfig(
            train_shapes=tuple(d["train_shapes"]),
            train_fills=tuple(d["train_fills"]),
            train_colors=tuple(d["train_colors"]),
            holdout_shapes=tuple(d["holdout_shapes"]),
            holdout_fills=tuple(d["holdout_fills"]),
            holdout_colors=tuple(d["holdout_colors"]),
        )


@dataclass
class Taxonomy:
    """Balanced category tree with leaf metadata and similarity queries.

    Nodes are integer ids; 0 is the root.  ``parent[i]`` gives the parent id
    (parent[0] == -1) and ``depth[i]`` the number of edges from the root.
    """

    config: TaxonomyConfig
    parent: list[int] = field(default_factory=list)
    depth: list[int] = field(default_factory=list)
    node_names: list[str] = field(default_factory=list)
    categories: list[Category] = field(default_factory=list)
    leaf_node: dict[int, int] = field(default_factory=dict)  # leaf_id -> node id

    @property
    def train_categories(self) -> list[Category]:
        return [c for c in self.categories if not c.holdout]

    @property
    def holdout_categories(self) -> list[Category]:
        return [c for c in self.categories if c.holdout]

    def category(self, leaf_id: int) -> Category:
        return self.categories[leaf_id]

    def path_length(self, leaf_a: int, leaf_b: int) -> int:
        """Number of tree edges between two leaves."""
        a = self.leaf_node[leaf_a]
        b = self.leaf_node[leaf_b]
        dist = 0
        while self.depth[a] > self.depth[b]:
            a = self.parent[a]
            dist += 1
        while self.depth[b] > self.depth[a]:
            b = self.parent[b]
            dist += 1
        while a != b:
            a = self.parent[a]
            b = self.parent[b]
            dist += 2
        return dist

    def path_similarity(self, leaf_a: int, leaf_b: int) -> float:
        """Similarity of two leaves: 1 / (1 + path length).  Equals 1 iff a == b."""
        return 1.0 / (1.0 + self.path_length(leaf_a, leaf_b))

    def leaf_similarity_matrix(self):
        """Dense (L, L) matrix of pairwise leaf similarities (numpy float64)."""
        import numpy as np

        n = len(self.categories)
        sim = np.empty((n, n), dtype=np.float64)
        for i in range(n):
            sim[i, i] = 1.0
            for j in range(i + 1, n):
                sim[i, j] = sim[j, i] = self.path_similarity(i, j)
        return sim

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "categories": [c.to_dict() for c in self.categories],
        }


def build_taxonomy(config: TaxonomyConfig | None = None) -> Taxonomy:
    """Grow the balanced tree and assign leaf ids.

    Training leaves come first (ids 0..n_train-1) in shape-major order,
    followed by holdout leaves.  Node ids follow insertion order with the
    root at 0, so the tree is reproducible from the config alone.
    """
    cfg = config if config is not None else TaxonomyConfig()
    cfg.validate()
    tax = Taxonomy(config=cfg)
    tax.parent.append(-1)
    tax.depth.append(0)
    tax.node_names.append("root")

    def add_node(name: str, parent: int) -> int:
        node = len(tax.parent)
        tax.parent.append(parent)
        tax.depth.append(tax.depth[parent] + 1)
        tax.node_names.append(name)
        return node

    def grow(shapes, fills, colors, holdout: bool) -> None:
        for shape in shapes:
            shape_node = add_node(shape, 0)
            for fill in fills:
                fill_node = add_node(f"{shape}/{fill}", shape_node)
                for color in colors:
                    leaf_node = add_node(f"{shape}/{fill}/{color}", fill_node)
                    leaf_id = len(tax.categories)
                    tax.categories.append(Category(
                        leaf_id=leaf_id,
                        name=f"{shape}/{fill}/{color}",
                        shape=shape,
                        fill=fill,
                        color=color,
                        hue_interval=COLOR_FAMILIES[color],
                        holdout=holdout,
                    ))
                    tax.leaf_node[leaf_id] = leaf_node

    grow(cfg.train_shapes, cfg.train_fills, cfg.train_colors, holdout=False)
    grow(cfg.holdout_shapes, cfg.holdout_fills, cfg.holdout_colors, holdout=True)
    return tax
