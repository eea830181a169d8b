"""Sender and receiver networks and the discrete symbol channel.

The sender encodes an image, maps the feature vector to one logit per
vocabulary symbol, batchnorms the logits and emits a message: a
Gumbel-Softmax relaxation while training, a hard argmax one-hot at eval
time.  The receiver embeds the message and each candidate image into a
common space and scores candidates by temperature-scaled cosine
similarity.  A contrastive twin (one encoder, a symbol-logit head and a
projection head) shares the exact same trunk shapes so its features are
directly comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError
from .nn import MLP, BatchNorm, BatchNorm2d, Conv2d, Linear, Module
from .tensor import Tensor, no_grad

ARCHITECTURES = ("small-cnn", "mlp")


@dataclass(frozen=True)
class EncoderConfig:
    architecture: str = "small-cnn"
    conv_channels: tuple[int, ...] = (16, 32, 64)
    hidden_dim: int = 128
    feature_dim: int = 128
    embed_dim: int = 128
    image_size: int = 32
    in_channels: int = 3

    def validate(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; "
                              f"choose from {ARCHITECTURES}")
        for name, n in (("hidden_dim", self.hidden_dim), ("feature_dim", self.feature_dim),
                        ("embed_dim", self.embed_dim), ("image_size", self.image_size),
                        ("in_channels", self.in_channels)):
            if n < 1:
                raise ConfigError(f"{name} must be >= 1, got {n}")
        if self.architecture == "small-cnn":
            if not self.conv_channels:
                raise ConfigError("small-cnn needs at least one conv stage")
            stride = 2 ** len(self.conv_channels)
            if self.image_size % stride:
                raise ConfigError(f"image_size {self.image_size} not divisible by the "
                                  f"total pooling stride {stride}")

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "conv_channels": list(self.conv_channels),
            "hidden_dim": self.hidden_dim,
            "feature_dim": self.feature_dim,
            "embed_dim": self.embed_dim,
            "image_size": self.image_size,
            "in_channels": self.in_channels,
        }

    @staticmethod
    def from_dict(d: dict) -> "EncoderConfig":
        return EncoderConfig(
            architecture=str(d["architecture"]),
            conv_channels=tuple(int(c) for c in d["conv_channels"]),
            hidden_dim=int(d["hidden_dim"]),
            feature_dim=int(d["feature_dim"]),
            embed_dim=int(d["embed_dim"]),
            image_size=int(d["image_size"]),
            in_channels=int(d["in_channels"]),
        )


@dataclass(frozen=True)
class ChannelConfig:
    vocab_size: int = 64
    gumbel_temperature: float = 5.0
    cosine_temperature: float = 0.1
    straight_through: bool = False

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.gumbel_temperature <= 0:
            raise ConfigError(f"gumbel_temperature must be > 0, got {self.gumbel_temperature}")
        if self.cosine_temperature <= 0:
            raise ConfigError(f"cosine_temperature must be > 0, got {self.cosine_temperature}")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "gumbel_temperature": self.gumbel_temperature,
            "cosine_temperature": self.cosine_temperature,
            "straight_through": self.straight_through,
        }

    @staticmethod
    def from_dict(d: dict) -> "ChannelConfig":
        return ChannelConfig(
            vocab_size=int(d["vocab_size"]),
            gumbel_temperature=float(d["gumbel_temperature"]),
            cosine_temperature=float(d["cosine_temperature"]),
            straight_through=bool(d["straight_through"]),
        )


class CnnEncoder(Module):
    """Stack of conv3x3 -> batchnorm -> ReLU -> maxpool2 stages, then a linear map."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        config.validate()
        self.config = config
        self.convs: list[Conv2d] = []
        self.norms: list[BatchNorm2d] = []
        cin = config.in_channels
        for cout in config.conv_channels:
            self.convs.append(Conv2d(cin, cout, 3, rng, stride=1, padding=1, dtype=dtype))
            self.norms.append(BatchNorm2d(cout, dtype=dtype))
            cin = cout
        side = config.image_size // (2 ** len(config.conv_channels))
        self.flat_dim = cin * side * side
        self.head = Linear(self.flat_dim, config.feature_dim, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise DimensionError(f"encoder expects (B, C, H, W), got {x.shape}")
        h = x
        for conv, norm in zip(self.convs, self.norms):
            h = ops.maxpool2d(ops.relu(norm.forward(conv.forward(h))), window=2)
        return self.head.forward(ops.reshape(h, (h.shape[0], self.flat_dim)))


class MlpEncoder(Module):
    """Flatten -> linear -> batchnorm -> ReLU -> linear; a control trunk."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        config.validate()
        self.config = config
        in_dim = config.in_channels * config.image_size * config.image_size
        self.net = MLP(in_dim, config.hidden_dim, config.feature_dim, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise DimensionError(f"encoder expects (B, C, H, W), got {x.shape}")
        b = x.shape[0]
        flat = ops.reshape(x, (b, x.size // b))
        return self.net.forward(flat)


def make_encoder(config: EncoderConfig, rng: np.random.Generator, dtype=np.float64) -> Module:
    config.validate()
    if config.architecture == "small-cnn":
        return CnnEncoder(config, rng, dtype=dtype)
    return MlpEncoder(config, rng, dtype=dtype)


def gumbel_softmax(v: Tensor, temperature: float, rng: np.random.Generator | None,
                   straight_through: bool = False) -> Tensor:
    """Relaxed one-hot sample: softmax((v + gumbel noise) / temperature).

    Noise is -log(-log u) with u clamped away from {0, 1} for numerical
    safety.  ``rng=None`` injects zero noise, which reduces the sample to a
    tempered softmax of ``v`` (useful for deterministic checks).  With
    ``straight_through`` the forward value is the hard argmax one-hot while
    the gradient still flows through the relaxation.
    """
    if temperature <= 0:
        raise ConfigError(f"gumbel temperature must be > 0, got {temperature}")
    if rng is None:
        noise = np.zeros_like(v.data)
    else:
        u = np.clip(rng.uniform(size=v.shape), 1e-10, 1.0 - 1e-10)
        noise = -np.log(-np.log(u))
    soft = ops.softmax(ops.scale(ops.add(v, Tensor(noise)), 1.0 / temperature), axis=-1)
    if not straight_through:
        return soft
    hard = one_hot(np.argmax(soft.data, axis=-1), v.shape[-1], dtype=v.data.dtype)
    # Forward equals the hard sample; the gradient is the relaxation's.
    return ops.add(Tensor(hard - soft.data), soft)


def one_hot(indices: np.ndarray, depth: int, dtype=np.float64) -> np.ndarray:
    idx = np.asarray(indices)
    out = np.zeros(idx.shape + (depth,), dtype=dtype)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def discretize(v: np.ndarray | Tensor) -> np.ndarray:
    """Hard one-hot along the last axis; ties break to the lowest index."""
    data = v.data if isinstance(v, Tensor) else np.asarray(v)
    return one_hot(np.argmax(data, axis=-1), data.shape[-1], dtype=data.dtype)


class Sender(Module):
    """Encoder -> symbol logits -> batchnorm -> (relaxed or hard) message."""

    def __init__(self, encoder: Module, feature_dim: int, channel: ChannelConfig,
                 rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        channel.validate()
        self.encoder = encoder
        self.channel = channel
        self.symbol_head = Linear(feature_dim, channel.vocab_size, rng, dtype=dtype)
        self.symbol_norm = BatchNorm(channel.vocab_size, dtype=dtype)

    def logits(self, images: Tensor) -> Tensor:
        """Normalized symbol scores v, shape (B, |V|)."""
        return self.symbol_norm.forward(self.symbol_head.forward(self.encoder.forward(images)))

    def forward(self, images: Tensor, rng: np.random.Generator | None = None
                ) -> tuple[Tensor, Tensor]:
        """Messages (B, |V|) and the logits they came from.

        Train mode samples the Gumbel-Softmax relaxation; eval mode argmaxes
        the logits into an exact one-hot message.
        """
        v = self.logits(images)
        if self.training:
            message = gumbel_softmax(v, self.channel.gumbel_temperature, rng,
                                     straight_through=self.channel.straight_through)
        else:
            message = Tensor(discretize(v))
        return message, v

    def symbols(self, images: Tensor) -> np.ndarray:
        """Hard symbol indices (B,) regardless of training mode."""
        return np.argmax(self.logits(images).data, axis=-1)


class Receiver(Module):
    """Scores candidate images against a message in a shared embedding space."""

    def __init__(self, encoder: Module, feature_dim: int, hidden_dim: int, embed_dim: int,
                 vocab_size: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.encoder = encoder
        self.image_head = MLP(feature_dim, hidden_dim, embed_dim, rng, dtype=dtype)
        self.symbol_embed = Linear(vocab_size, embed_dim, rng, dtype=dtype)

    def embed_message(self, message: Tensor) -> Tensor:
        """(B, |V|) messages to (B, E) embeddings; one-hot rows select
        embedding-table rows, relaxed rows mix them."""
        return self.symbol_embed.forward(message)

    def encode_images(self, images: Tensor) -> Tensor:
        return self.image_head.forward(self.encoder.forward(images))

    def score_matrix(self, messages: Tensor, images: Tensor,
                     cosine_temperature: float) -> Tensor:
        """(B, B) logits: cosine(message_i, image_j) / temperature."""
        if cosine_temperature <= 0:
            raise ConfigError(f"cosine temperature must be > 0, got {cosine_temperature}")
        sims = ops.cosine_matrix(self.embed_message(messages), self.encode_images(images))
        return ops.scale(sims, 1.0 / cosine_temperature)

    def forward(self, message: Tensor, candidates: Tensor,
                cosine_temperature: float) -> Tensor:
        """Probability over ``n`` candidates for a single message."""
        if candidates.shape[0] < 2:
            raise ConfigError(f"need at least 2 candidates, got {candidates.shape[0]}")
        msg = message if message.ndim == 2 else ops.reshape(message, (1, message.size))
        logits = self.score_matrix(msg, candidates, cosine_temperature)
        return ops.reshape(ops.softmax(logits, axis=1), (candidates.shape[0],))


class GameAgents(Module):
    """Sender plus receiver; ``shared`` means one encoder object serves both."""

    def __init__(self, encoder_config: EncoderConfig, channel_config: ChannelConfig,
                 rng: np.random.Generator, shared_encoder: bool = False, dtype=np.float64):
        super().__init__()
        encoder_config.validate()
        channel_config.validate()
        self.encoder_config = encoder_config
        self.channel_config = channel_config
        self.shared_encoder = shared_encoder
        sender_encoder = make_encoder(encoder_config, rng, dtype=dtype)
        receiver_encoder = sender_encoder if shared_encoder else make_encoder(
            encoder_config, rng, dtype=dtype)
        self.sender = Sender(sender_encoder, encoder_config.feature_dim, channel_config,
                             rng, dtype=dtype)
        self.receiver = Receiver(receiver_encoder, encoder_config.feature_dim,
                                 encoder_config.hidden_dim, encoder_config.embed_dim,
                                 channel_config.vocab_size, rng, dtype=dtype)


class SimCLRNet(Module):
    """Contrastive twin of the game agents: encoder, symbol head, projection head.

    The symbol head mirrors the sender's (linear + batchnorm to |V| scores);
    the projection head consumes the |V|-dimensional score vector, so a hard
    one-hot can be pushed through it just like a relaxed score vector.
    """

    def __init__(self, encoder_config: EncoderConfig, vocab_size: int,
                 rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        encoder_config.validate()
        if vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {vocab_size}")
        self.encoder_config = encoder_config
        self.vocab_size = vocab_size
        self.encoder = make_encoder(encoder_config, rng, dtype=dtype)
        self.score_head = Linear(encoder_config.feature_dim, vocab_size, rng, dtype=dtype)
        self.score_norm = BatchNorm(vocab_size, dtype=dtype)
        self.projection = MLP(vocab_size, encoder_config.hidden_dim,
                              encoder_config.embed_dim, rng, dtype=dtype)

    def scores(self, images: Tensor) -> Tensor:
        return self.score_norm.forward(self.score_head.forward(self.encoder.forward(images)))

    def forward(self, images: Tensor) -> tuple[Tensor, Tensor]:
        """(scores, projections) for a batch of images."""
        s = self.scores(images)
        return s, self.projection.forward(s)

    def symbols(self, images: Tensor) -> np.ndarray:
        """Hard symbol indices: argmax of the score vector."""
        return np.argmax(self.scores(images).data, axis=-1)


def extract_features(encoder: Module, images: np.ndarray, batch_size: int = 256,
                     dtype=np.float64) -> np.ndarray:
    """Eval-mode encoder features for (N, C, H, W) pixels, without grad.

    The module's train/eval state is restored afterwards.
    """
    was_training = encoder.training
    encoder.eval()
    chunks = []
    try:
        with no_grad():
            for start in range(0, images.shape[0], batch_size):
                batch = Tensor(images[start:start + batch_size].astype(dtype, copy=False))
                chunks.append(encoder.forward(batch).data)
    finally:
        encoder.set_training(was_training)
    return np.concatenate(chunks, axis=0)
