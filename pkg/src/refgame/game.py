"""Referential game training and evaluation.

A training step plays one batch-sized game: every image in the batch is
simultaneously a target (for its own message) and a distractor (for all
the others).  The sender sees one augmented view, the receiver another,
messages cross the discrete channel, and the loss is cross-entropy of the
receiver's temperature-scaled cosine scores against the diagonal.  The
contrastive baseline reuses the same machinery with its pairwise loss.

Evaluation freezes everything: messages become hard argmax one-hots,
batchnorm uses running statistics, and accuracy is measured over games
with ``n`` candidates sampled from a held-out pool.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ops
from .agents import ChannelConfig, EncoderConfig, GameAgents, SimCLRNet, one_hot
from .checkpoint import load_arrays, save_arrays
from .data.augment import AugmentConfig, augment_batch
from .data.splits import Dataset
from .errors import ConfigError, DataError, DivergenceError
from .nn import Module
from .seeding import derive_rng
from .tensor import Tensor, no_grad, recording
from .optim import Adam

log = logging.getLogger(__name__)

MODEL_KINDS = ("game", "simclr")


@dataclass(frozen=True)
class TrainConfig:
    """One training run: model kind, variant flags, budget, sub-configs."""

    model: str = "game"
    augmentations: bool = True
    shared_encoder: bool = False
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    precision: str = "float64"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self) -> None:
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model!r}; choose from {MODEL_KINDS}")
        if self.model == "simclr" and not self.augmentations:
            raise ConfigError("the contrastive baseline is undefined without augmented views")
        if self.model == "simclr" and self.shared_encoder:
            raise ConfigError("shared_encoder only applies to the two-agent game")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision!r}")
        self.encoder.validate()
        self.channel.validate()
        self.augment.validate()

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32

    @property
    def variant(self) -> str:
        """Human-readable slug: game+aug, game-aug, game-aug+shared, simclr."""
        if self.model == "simclr":
            return "simclr"
        slug = "game+aug" if self.augmentations else "game-aug"
        if self.shared_encoder:
            slug += "+shared"
        return slug

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "augmentations": self.augmentations,
            "shared_encoder": self.shared_encoder,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "precision": self.precision,
            "encoder": self.encoder.to_dict(),
            "channel": self.channel.to_dict(),
            "augment": self.augment.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(
            model=str(d["model"]),
            augmentations=bool(d["augmentations"]),
            shared_encoder=bool(d["shared_encoder"]),
            epochs=int(d["epochs"]),
            batch_size=int(d["batch_size"]),
            learning_rate=float(d["learning_rate"]),
            seed=int(d["seed"]),
            precision=str(d["precision"]),
            encoder=EncoderConfig.from_dict(d["encoder"]),
            channel=ChannelConfig.from_dict(d["channel"]),
            augment=AugmentConfig.from_dict(d["augment"]),
        )


@dataclass(frozen=True)
class GameBatch:
    """Two views of the same images; target i hides at position i."""

    sender_views: np.ndarray
    receiver_views: np.ndarray
    targets: np.ndarray
    sample_ids: np.ndarray


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float
    seconds: float

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "loss": self.loss,
                "accuracy": self.accuracy, "seconds": self.seconds}


@dataclass(frozen=True)
class GameEval:
    """Accuracy over ``games`` games of ``n_candidates`` choices each."""

    accuracy: float
    n_candidates: int
    games: int

    @property
    def chance(self) -> float:
        return 1.0 / self.n_candidates

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "n_candidates": self.n_candidates,
                "games": self.games, "chance": self.chance}


def assemble_batch(images: np.ndarray, sample_ids: np.ndarray,
                   augment_config: AugmentConfig | None,
                   rng: np.random.Generator) -> GameBatch:
    """Build sender and receiver views.  Without augmentation both sides see
    the raw pixels; with it, two independent draws of the pipeline."""
    ids = np.asarray(sample_ids)
    if len(np.unique(ids)) != len(ids):
        raise DataError("duplicate sample ids in one batch: every candidate must be distinct")
    if augment_config is None:
        sender_views = receiver_views = images
    else:
        sender_views = augment_batch(images, augment_config, rng)
        receiver_views = augment_batch(images, augment_config, rng)
    return GameBatch(sender_views=sender_views, receiver_views=receiver_views,
                     targets=np.arange(images.shape[0]), sample_ids=ids)


def game_loss(agents: GameAgents, batch: GameBatch, rng: np.random.Generator | None,
              dtype=np.float64) -> tuple[Tensor, float]:
    """Cross-entropy of receiver scores against the diagonal, plus accuracy."""
    messages, _ = agents.sender.forward(
        Tensor(batch.sender_views.astype(dtype, copy=False)), rng=rng)
    logits = agents.receiver.score_matrix(
        messages, Tensor(batch.receiver_views.astype(dtype, copy=False)),
        agents.channel_config.cosine_temperature)
    loss = ops.cross_entropy(logits, batch.targets)
    accuracy = float(np.mean(np.argmax(logits.data, axis=1) == batch.targets))
    return loss, accuracy


def ntxent_loss(projections: Tensor, temperature: float) -> Tensor:
    """Normalized-temperature cross-entropy over interleaved view pairs.

    Row 2k and row 2k+1 are the two views of item k.  Each row's positive
    is its partner; every other row in the 2B batch is a negative.  The
    diagonal is masked out of the denominator with a large negative
    constant before the softmax.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    n = projections.shape[0]
    if n < 4 or n % 2:
        raise ConfigError(f"need an even number >= 4 of projections, got {n}")
    sims = ops.scale(ops.cosine_matrix(projections, projections), 1.0 / temperature)
    mask = np.zeros((n, n), dtype=projections.data.dtype)
    np.fill_diagonal(mask, -1e9)
    masked = ops.add(sims, Tensor(mask))
    partners = np.arange(n) ^ 1
    return ops.neg(ops.tmean(ops.take_per_row(ops.log_softmax(masked, axis=1), partners)))


def ntxent_accuracy(projections: np.ndarray) -> float:
    """Fraction of rows whose nearest non-self row is their view partner."""
    norms = np.linalg.norm(projections, axis=1, keepdims=True)
    zn = projections / np.maximum(norms, 1e-8)
    sims = zn @ zn.T
    np.fill_diagonal(sims, -np.inf)
    partners = np.arange(projections.shape[0]) ^ 1
    return float(np.mean(np.argmax(sims, axis=1) == partners))


def build_model(config: TrainConfig, rng: np.random.Generator | None = None) -> Module:
    config.validate()
    if rng is None:
        rng = derive_rng(config.seed, "init")
    if config.model == "simclr":
        return SimCLRNet(config.encoder, config.channel.vocab_size, rng, dtype=config.dtype)
    return GameAgents(config.encoder, config.channel, rng,
                      shared_encoder=config.shared_encoder, dtype=config.dtype)


@dataclass
class TrainResult:
    model: Module
    config: TrainConfig
    metrics: list[EpochMetrics]


def train(config: TrainConfig, dataset: Dataset,
          on_epoch=None) -> TrainResult:
    """Train one model on the train split.

    Batches are drawn without replacement each epoch (remainder dropped).
    Randomness flows through four named streams derived from the seed:
    init, shuffle, augment and gumbel, so e.g. turning augmentation off
    does not also change the weight initialization.
    """
    config.validate()
    n = len(dataset)
    if n < config.batch_size:
        raise DataError(f"dataset of {n} samples cannot fill a batch of {config.batch_size}")
    model = build_model(config)
    optimizer = Adam(model.parameters(), lr=config.learning_rate)
    shuffle_rng = derive_rng(config.seed, "shuffle")
    augment_rng = derive_rng(config.seed, "augment")
    gumbel_rng = derive_rng(config.seed, "gumbel")
    aug_cfg = config.augment if config.augmentations else None
    steps = n // config.batch_size
    metrics: list[EpochMetrics] = []

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        losses = np.empty(steps)
        accs = np.empty(steps)
        for step in range(steps):
            idx = order[step * config.batch_size:(step + 1) * config.batch_size]
            images = dataset.images[idx]
            with recording() as tape:
                if config.model == "game":
                    batch = assemble_batch(images, dataset.sample_ids[idx], aug_cfg, augment_rng)
                    loss, acc = game_loss(model, batch, gumbel_rng, dtype=config.dtype)
                else:
                    views = np.empty((2 * len(idx),) + images.shape[1:])
                    views[0::2] = augment_batch(images, config.augment, augment_rng)
                    views[1::2] = augment_batch(images, config.augment, augment_rng)
                    _, z = model.forward(Tensor(views.astype(config.dtype, copy=False)))
                    loss = ntxent_loss(z, config.channel.cosine_temperature)
                    acc = ntxent_accuracy(z.data)
                loss_val = float(loss.item())
                if not np.isfinite(loss_val):
                    raise DivergenceError(
                        f"non-finite loss {loss_val} at epoch {epoch} step {step}")
                tape.backward(loss)
            optimizer.step()
            optimizer.zero_grad()
            losses[step] = loss_val
            accs[step] = acc
        em = EpochMetrics(epoch=epoch, loss=float(losses.mean()),
                          accuracy=float(accs.mean()),
                          seconds=time.perf_counter() - t0)
        metrics.append(em)
        log.info("%s epoch %d/%d loss %.4f acc %.3f (%.1fs)", config.variant,
                 epoch + 1, config.epochs, em.loss, em.accuracy, em.seconds)
        if on_epoch is not None:
            on_epoch(em, model)
    return TrainResult(model=model, config=config, metrics=metrics)


def save_model(path: str | Path, result: TrainResult) -> None:
    """Weight container plus a JSON sidecar describing how to rebuild it."""
    path = Path(path)
    save_arrays(path, result.model.state_arrays())
    sidecar = {
        "config": result.config.to_dict(),
        "metrics": [m.to_dict() for m in result.metrics],
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n")


def load_model(path: str | Path) -> TrainResult:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    config = TrainConfig.from_dict(sidecar["config"])
    model = build_model(config)
    model.load_state_arrays(load_arrays(path))
    metrics = [EpochMetrics(**m) for m in sidecar["metrics"]]
    return TrainResult(model=model, config=config, metrics=metrics)


def _normalized_rows(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), eps)


def _sender_symbols(agents: GameAgents, images: np.ndarray, dtype,
                    batch_size: int = 256) -> np.ndarray:
    out = []
    for start in range(0, images.shape[0], batch_size):
        batch = Tensor(images[start:start + batch_size].astype(dtype, copy=False))
        out.append(agents.sender.symbols(batch))
    return np.concatenate(out)


def _receiver_embeddings(agents: GameAgents, images: np.ndarray, dtype,
                         batch_size: int = 256) -> np.ndarray:
    out = []
    for start in range(0, images.shape[0], batch_size):
        batch = Tensor(images[start:start + batch_size].astype(dtype, copy=False))
        out.append(agents.receiver.encode_images(batch).data)
    return np.concatenate(out, axis=0)


def eval_game_accuracy(agents: GameAgents, dataset: Dataset, n_candidates: int = 32,
                       games: int = 2048, rng: np.random.Generator | None = None,
                       dtype=np.float64) -> GameEval:
    """Play seeded games with hard messages over a frozen candidate pool.

    Per game: sample ``n_candidates`` distinct images, pick a target
    position, send the target's argmax symbol, and score every candidate by
    cosine between the symbol's embedding and the candidate's embedding.
    Temperature drops out of the argmax, so raw cosines decide.
    """
    pool = len(dataset)
    if n_candidates < 2:
        raise ConfigError(f"need at least 2 candidates per game, got {n_candidates}")
    if n_candidates > pool:
        raise ConfigError(f"cannot draw {n_candidates} distinct candidates from {pool} images")
    if games < 1:
        raise ConfigError(f"games must be >= 1, got {games}")
    if rng is None:
        rng = derive_rng(0, "eval")

    was_training = agents.training
    agents.eval()
    try:
        with no_grad():
            symbols = _sender_symbols(agents, dataset.images, dtype)
            reps = _normalized_rows(_receiver_embeddings(agents, dataset.images, dtype))
            vocab = agents.channel_config.vocab_size
            table = agents.receiver.embed_message(
                Tensor(one_hot(np.arange(vocab), vocab, dtype=dtype))).data
            table = _normalized_rows(table)
    finally:
        agents.set_training(was_training)

    candidate_idx = np.empty((games, n_candidates), dtype=np.int64)
    for g in range(games):
        candidate_idx[g] = rng.choice(pool, size=n_candidates, replace=False)
    target_pos = rng.integers(0, n_candidates, size=games)

    correct = 0
    block = max(1, (1 << 22) // (n_candidates * reps.shape[1]))
    for start in range(0, games, block):
        idx = candidate_idx[start:start + block]
        pos = target_pos[start:start + block]
        target_global = idx[np.arange(len(idx)), pos]
        queries = table[symbols[target_global]]            # (g, E)
        cands = reps[idx]                                  # (g, n, E)
        scores = np.einsum("ge,gne->gn", queries, cands)
        correct += int(np.sum(np.argmax(scores, axis=1) == pos))
    return GameEval(accuracy=correct / games, n_candidates=n_candidates, games=games)


def eval_simclr_disc_accuracy(net: SimCLRNet, dataset: Dataset, n_candidates: int = 32,
                              games: int = 2048, rng: np.random.Generator | None = None,
                              dtype=np.float64) -> GameEval:
    """Play the game with a contrastive net that never saw one.

    The net acts as its own sender and receiver: the target's symbol is the
    argmax of its score vector, symbol k is embedded as input row k of the
    projection head's first layer, and candidates are ranked by cosine
    between that embedding and their own first-layer image of the score
    vector.  Row selection keeps the comparison in the space the head
    actually mixes score coordinates in; pushing a hard one-hot through the
    whole head would ask it about inputs far off its training manifold.
    """
    pool = len(dataset)
    if n_candidates < 2:
        raise ConfigError(f"need at least 2 candidates per game, got {n_candidates}")
    if n_candidates > pool:
        raise ConfigError(f"cannot draw {n_candidates} distinct candidates from {pool} images")
    if rng is None:
        rng = derive_rng(0, "eval")

    was_training = net.training
    net.eval()
    try:
        with no_grad():
            scores_list = []
            for start in range(0, pool, 256):
                batch = Tensor(dataset.images[start:start + 256].astype(dtype, copy=False))
                scores_list.append(net.scores(batch).data)
    finally:
        net.set_training(was_training)
    scores = np.concatenate(scores_list)
    symbols = np.argmax(scores, axis=-1)
    first = net.projection.fc1
    table = _normalized_rows(first.weight.data)            # (|V|, hidden)
    reps = _normalized_rows(scores @ first.weight.data + first.bias.data)

    candidate_idx = np.empty((games, n_candidates), dtype=np.int64)
    for g in range(games):
        candidate_idx[g] = rng.choice(pool, size=n_candidates, replace=False)
    target_pos = rng.integers(0, n_candidates, size=games)
    correct = 0
    block = max(1, (1 << 22) // (n_candidates * reps.shape[1]))
    for start in range(0, games, block):
        idx = candidate_idx[start:start + block]
        pos = target_pos[start:start + block]
        target_global = idx[np.arange(len(idx)), pos]
        queries = table[symbols[target_global]]
        cands = reps[idx]
        correct += int(np.sum(np.argmax(
            np.einsum("ge,gne->gn", queries, cands), axis=1) == pos))
    return GameEval(accuracy=correct / games, n_candidates=n_candidates, games=games)
