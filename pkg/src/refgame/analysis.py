"""Protocol interpretability metrics and clustering baselines.

A protocol is the set of (sample, category, symbol) records produced by a
trained sender argmax-ing its symbol scores over a dataset.  Two scores
ask whether the symbols mean anything:

* normalized mutual information between category and symbol labels,
  MI / ((H(category) + H(symbol)) / 2), in [0, 1];
* taxonomic pair similarity: over all pairs of records that share a
  symbol, the mean tree similarity 1 / (1 + path length) of their
  categories, so a symbol whose images sit in one subtree scores high.

Both come with a label-permutation test: shuffle the symbol column,
recompute, and report p = (1 + #{null >= observed}) / (1 + permutations).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .data.splits import Dataset
from .errors import ConfigError, DataError
from .seeding import derive_rng
from .tensor import Tensor, no_grad

DEFAULT_PAIR_CAP = 2_000_000


@dataclass
class Protocol:
    """Symbols emitted for every sample of a dataset."""

    sample_ids: np.ndarray
    categories: np.ndarray
    symbols: np.ndarray

    def __post_init__(self):
        if not (len(self.sample_ids) == len(self.categories) == len(self.symbols)):
            raise DataError("protocol columns must have equal length")

    def __len__(self) -> int:
        return len(self.symbols)

    def size(self) -> int:
        """Number of distinct symbols actually used."""
        if len(self.symbols) == 0:
            raise DataError("empty protocol has no size")
        return int(len(np.unique(self.symbols)))

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["sample_id", "category_id", "symbol"])
            for sid, cat, sym in zip(self.sample_ids, self.categories, self.symbols):
                writer.writerow([int(sid), int(cat), int(sym)])

    @staticmethod
    def load_csv(path: str | Path) -> "Protocol":
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != ["sample_id", "category_id", "symbol"]:
                raise DataError(f"unexpected protocol header {header!r}")
            rows = [(int(r[0]), int(r[1]), int(r[2])) for r in reader]
        if not rows:
            raise DataError("protocol file has no records")
        arr = np.array(rows, dtype=np.int64)
        return Protocol(sample_ids=arr[:, 0], categories=arr[:, 1], symbols=arr[:, 2])


def collect_protocol(model, dataset: Dataset, dtype=np.float64,
                     batch_size: int = 256) -> Protocol:
    """Run the sender side of ``model`` over a dataset in eval mode.

    Works for the two-agent game (symbols from the sender) and for the
    contrastive net (symbols from its score head); both expose ``symbols``.
    """
    if len(dataset) == 0:
        raise DataError("cannot collect a protocol from an empty dataset")
    symbol_fn: Callable = model.sender.symbols if hasattr(model, "sender") else model.symbols
    owner = model.sender if hasattr(model, "sender") else model
    was_training = owner.training
    owner.eval()
    chunks = []
    try:
        with no_grad():
            for start in range(0, len(dataset), batch_size):
                batch = Tensor(dataset.images[start:start + batch_size].astype(dtype, copy=False))
                chunks.append(symbol_fn(batch))
    finally:
        owner.set_training(was_training)
    return Protocol(sample_ids=dataset.sample_ids.copy(),
                    categories=dataset.labels.copy(),
                    symbols=np.concatenate(chunks).astype(np.int64))


# ---------------------------------------------------------------------------
# mutual information


@dataclass(frozen=True)
class NmiResult:
    value: float
    mutual_information: float
    category_entropy: float
    symbol_entropy: float
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "mutual_information": self.mutual_information,
            "category_entropy": self.category_entropy,
            "symbol_entropy": self.symbol_entropy,
            "degenerate": self.degenerate,
        }


def contingency_table(categories: np.ndarray, symbols: np.ndarray) -> np.ndarray:
    """Joint count matrix over the distinct values of each column."""
    if len(categories) != len(symbols):
        raise DataError("categories and symbols must align")
    if len(categories) == 0:
        raise DataError("empty protocol")
    _, ci = np.unique(categories, return_inverse=True)
    _, si = np.unique(symbols, return_inverse=True)
    nc = ci.max() + 1
    ns = si.max() + 1
    return np.bincount(ci * ns + si, minlength=nc * ns).reshape(nc, ns)


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def normalized_mutual_information(categories: np.ndarray,
                                  symbols: np.ndarray) -> NmiResult:
    """MI normalized by the arithmetic mean of the two entropies (natural log).

    Degenerate cases: if both columns are constant the labels agree
    perfectly and the score is 1; if exactly one is constant there is no
    information to share and the score is 0.  Both are flagged.
    """
    table = contingency_table(categories, symbols)
    n = table.sum()
    row = table.sum(axis=1)
    col = table.sum(axis=0)
    h_c = _entropy(row)
    h_s = _entropy(col)
    if h_c == 0.0 and h_s == 0.0:
        return NmiResult(1.0, 0.0, 0.0, 0.0, degenerate=True)
    if h_c == 0.0 or h_s == 0.0:
        return NmiResult(0.0, 0.0, h_c, h_s, degenerate=True)
    nz = table > 0
    p = table[nz] / n
    outer = (row[:, None] * col[None, :])[nz] / (n * n)
    mi = float((p * np.log(p / outer)).sum())
    mi = max(mi, 0.0)
    return NmiResult(mi / ((h_c + h_s) / 2.0), mi, h_c, h_s, degenerate=False)


# ---------------------------------------------------------------------------
# taxonomic pair similarity


@dataclass(frozen=True)
class WnsimResult:
    value: float | None
    n_pairs: int
    sampled: bool

    @property
    def defined(self) -> bool:
        return self.value is not None

    def to_dict(self) -> dict:
        value = None if self.value is None else float(self.value)
        return {"value": value, "n_pairs": self.n_pairs, "sampled": self.sampled}


def wnsim(categories: np.ndarray, symbols: np.ndarray, similarity: np.ndarray,
          pair_cap: int = DEFAULT_PAIR_CAP,
          rng: np.random.Generator | None = None) -> WnsimResult:
    """Mean tree similarity over same-symbol record pairs, pooled across symbols.

    ``similarity`` is the (L, L) leaf matrix indexed by category id.  Exact
    up to ``pair_cap`` total pairs via the closed form per symbol group;
    beyond that, ``pair_cap`` pairs are drawn with replacement (sampled
    result is flagged).  When every symbol occurs at most once there are no
    pairs and the metric is undefined rather than zero.
    """
    if len(categories) != len(symbols):
        raise DataError("categories and symbols must align")
    if np.any(categories < 0) or np.any(categories >= similarity.shape[0]):
        raise DataError("category id outside similarity matrix")
    order = np.argsort(symbols, kind="stable")
    sorted_syms = symbols[order]
    sorted_cats = categories[order]
    boundaries = np.flatnonzero(np.diff(sorted_syms)) + 1
    groups = np.split(sorted_cats, boundaries)
    sizes = np.array([len(g) for g in groups], dtype=np.int64)
    pair_counts = sizes * (sizes - 1) // 2
    total_pairs = int(pair_counts.sum())
    if total_pairs == 0:
        return WnsimResult(value=None, n_pairs=0, sampled=False)

    if total_pairs <= pair_cap:
        num = 0.0
        nleaf = similarity.shape[0]
        for g in groups:
            if len(g) < 2:
                continue
            c = np.bincount(g, minlength=nleaf).astype(np.float64)
            # Sum over unordered record pairs: self-pairs contribute sim 1.
            num += 0.5 * (c @ similarity @ c - len(g))
        return WnsimResult(value=num / total_pairs, n_pairs=total_pairs, sampled=False)

    if rng is None:
        rng = derive_rng(0, "wnsim")
    probs = pair_counts / total_pairs
    draws = rng.choice(len(groups), size=pair_cap, p=probs)
    total = 0.0
    for gi in np.unique(draws):
        g = groups[gi]
        m = int((draws == gi).sum())
        i = rng.integers(0, len(g), size=m)
        j = rng.integers(0, len(g) - 1, size=m)
        j = j + (j >= i)
        total += similarity[g[i], g[j]].sum()
    return WnsimResult(value=total / pair_cap, n_pairs=total_pairs, sampled=True)


# ---------------------------------------------------------------------------
# permutation test


@dataclass(frozen=True)
class PermutationResult:
    observed: float | None
    p_value: float | None
    permutations: int
    alpha: float
    significant: bool | None

    @property
    def testable(self) -> bool:
        return self.observed is not None

    def to_dict(self) -> dict:
        return {
            "observed": self.observed,
            "p_value": self.p_value,
            "permutations": self.permutations,
            "alpha": self.alpha,
            "significant": self.significant,
            "testable": self.testable,
        }


def permutation_test(metric, categories: np.ndarray, symbols: np.ndarray,
                     permutations: int = 999, alpha: float = 0.01,
                     rng: np.random.Generator | None = None) -> PermutationResult:
    """Shuffle the symbol column and locate the observed value in the null.

    ``metric(categories, symbols, rng)`` returns a float or None; a None
    observed value makes the whole test untestable and is propagated
    rather than scored.  The add-one estimate never returns p = 0.
    """
    if permutations < 1:
        raise ConfigError(f"permutations must be >= 1, got {permutations}")
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    if rng is None:
        rng = derive_rng(0, "permutation")
    observed = metric(categories, symbols, rng)
    if observed is None:
        return PermutationResult(observed=None, p_value=None,
                                 permutations=permutations, alpha=alpha, significant=None)
    at_least = 0
    for _ in range(permutations):
        shuffled = rng.permutation(symbols)
        null_value = metric(categories, shuffled, rng)
        if null_value is None:
            raise DataError("metric defined on observed labels but not on a permutation")
        if null_value >= observed:
            at_least += 1
    p = (1 + at_least) / (1 + permutations)
    return PermutationResult(observed=float(observed), p_value=p,
                             permutations=permutations, alpha=alpha,
                             significant=p < alpha)


def nmi_metric(categories: np.ndarray, symbols: np.ndarray,
               rng: np.random.Generator | None = None) -> float:
    return normalized_mutual_information(categories, symbols).value


def wnsim_metric(similarity: np.ndarray, pair_cap: int = DEFAULT_PAIR_CAP):
    """Bind the leaf matrix, yielding a metric usable in the permutation test."""

    def metric(categories: np.ndarray, symbols: np.ndarray,
               rng: np.random.Generator | None = None) -> float | None:
        return wnsim(categories, symbols, similarity, pair_cap=pair_cap, rng=rng).value

    return metric


# ---------------------------------------------------------------------------
# k-means


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations: int
    converged: bool


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x - c||^2 = ||x||^2 - 2 x.c + ||c||^2, clipped against rounding.
    d = (points ** 2).sum(axis=1)[:, None] - 2.0 * points @ centroids.T \
        + (centroids ** 2).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
           max_iters: int = 300, tol: float = 1e-6) -> KMeansResult:
    """Lloyd iterations from a k-means++ start.

    Empty clusters are reseeded at the point currently farthest from its
    centroid.  Convergence is declared when no centroid moves more than
    ``tol`` (Euclidean).
    """
    n = points.shape[0]
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k > n:
        raise ConfigError(f"cannot place {k} centroids on {n} points")
    points = np.asarray(points, dtype=np.float64)

    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(n)]
    closest = _squared_distances(points, centroids[:1]).ravel()
    for i in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            centroids[i] = points[rng.integers(n)]
            continue
        centroids[i] = points[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, _squared_distances(points, centroids[i:i + 1]).ravel())

    assignments = np.zeros(n, dtype=np.int64)
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        dists = _squared_distances(points, centroids)
        assignments = dists.argmin(axis=1)
        mins = dists[np.arange(n), assignments]
        new_centroids = centroids.copy()
        for c in range(k):
            members = assignments == c
            if members.any():
                new_centroids[c] = points[members].mean(axis=0)
            else:
                far = int(np.argmax(mins))
                new_centroids[c] = points[far]
                mins[far] = 0.0
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        if shift <= tol:
            converged = True
            break
    dists = _squared_distances(points, centroids)
    assignments = dists.argmin(axis=1)
    inertia = float(dists[np.arange(n), assignments].sum())
    return KMeansResult(assignments=assignments, centroids=centroids,
                        inertia=inertia, iterations=iterations, converged=converged)
