"""Sender/receiver wiring, the discrete channel, and parameter plumbing."""

import numpy as np
import pytest

from refgame import ops
from refgame.agents import (ChannelConfig, EncoderConfig, GameAgents, Sender,
                            SimCLRNet, discretize, extract_features,
                            gumbel_softmax, make_encoder, one_hot)
from refgame.errors import ConfigError
from refgame.seeding import derive_rng
from refgame.tensor import Tape, Tensor, recording

SMALL = EncoderConfig(conv_channels=(4, 8), hidden_dim=16, feature_dim=16,
                      embed_dim=16, image_size=16)


def _images(n=3, size=16, seed=0):
    return np.random.default_rng(seed).uniform(size=(n, 3, size, size))


def test_gumbel_zero_noise_is_tempered_softmax():
    v = Tensor(np.array([[2.0, -1.0, 0.5]]))
    out = gumbel_softmax(v, temperature=2.0, rng=None)
    expect = np.exp(v.data / 2.0)
    expect /= expect.sum()
    np.testing.assert_allclose(out.data, expect, atol=1e-12)


def test_gumbel_rows_sum_to_one_and_vary():
    v = Tensor(np.zeros((64, 5)))
    out = gumbel_softmax(v, temperature=1.0, rng=derive_rng(0, "g"))
    np.testing.assert_allclose(out.data.sum(axis=1), np.ones(64), atol=1e-12)
    assert (out.data > 0).all()
    assert len(np.unique(np.argmax(out.data, axis=1))) > 1


def test_gumbel_max_marginals_match_softmax():
    # argmax of softmax((v+g)/tau) equals argmax of v+g, whose distribution
    # is the softmax of v regardless of tau (the Gumbel-max construction)
    logits = np.log(np.array([0.1, 0.2, 0.7]))
    v = Tensor(np.tile(logits, (40000, 1)))
    out = gumbel_softmax(v, temperature=5.0, rng=derive_rng(1, "gm"))
    counts = np.bincount(np.argmax(out.data, axis=1), minlength=3) / 40000
    np.testing.assert_allclose(counts, [0.1, 0.2, 0.7], atol=0.01)


def test_gumbel_temperature_sharpens():
    v = Tensor(np.array([[1.0, 0.0, -1.0]]))
    hot = gumbel_softmax(v, temperature=10.0, rng=None).data
    cold = gumbel_softmax(v, temperature=0.1, rng=None).data
    assert cold.max() > hot.max()
    with pytest.raises(ConfigError):
        gumbel_softmax(v, temperature=0.0, rng=None)


def test_straight_through_hard_forward_soft_backward():
    v = Tensor(np.array([[0.5, 2.0, -1.0]]), requires_grad=True)
    with recording(Tape()) as tape:
        out = gumbel_softmax(v, temperature=1.0, rng=None, straight_through=True)
        loss = ops.tsum(ops.mul(out, Tensor(np.array([[3.0, 1.0, 2.0]]))))
        tape.backward(loss)
    np.testing.assert_array_equal(out.data, [[0.0, 1.0, 0.0]])
    # gradient flows through the soft relaxation, so v gets a nonzero grad
    assert v.grad is not None and np.abs(v.grad).max() > 0


def test_discretize_one_hot_and_ties():
    v = np.array([[0.2, 0.9, 0.9], [1.0, 0.0, 1.0]])
    out = discretize(v)
    np.testing.assert_array_equal(out, [[0, 1, 0], [1, 0, 0]])  # ties -> lowest index
    np.testing.assert_array_equal(one_hot(np.array([2, 0]), 3),
                                  [[0, 0, 1], [1, 0, 0]])


def test_encoder_shapes_and_determinism():
    for arch in ("small-cnn", "mlp"):
        cfg = EncoderConfig(architecture=arch, conv_channels=(4, 8), hidden_dim=16,
                            feature_dim=16, embed_dim=16, image_size=16)
        enc1 = make_encoder(cfg, derive_rng(0, "e"))
        enc2 = make_encoder(cfg, derive_rng(0, "e"))
        x = Tensor(_images())
        out1 = enc1.forward(x)
        assert out1.shape == (3, 16)
        np.testing.assert_array_equal(out1.data, enc2.forward(x).data)


def test_encoder_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(image_size=30, conv_channels=(4, 8, 16)).validate()  # 30 % 8 != 0
    with pytest.raises(ConfigError):
        EncoderConfig(architecture="resnet").validate()


def test_sender_message_modes():
    sender = Sender(make_encoder(SMALL, derive_rng(0, "s")), SMALL.feature_dim,
                    ChannelConfig(vocab_size=8), derive_rng(1, "s"))
    x = Tensor(_images())
    msg, v = sender.forward(x, rng=derive_rng(2, "gumbel"))
    assert msg.shape == (3, 8) and v.shape == (3, 8)
    np.testing.assert_allclose(msg.data.sum(axis=1), np.ones(3), atol=1e-12)
    assert not np.array_equal(msg.data, discretize(msg.data))  # soft at train time
    sender.eval()
    hard, _ = sender.forward(x, rng=None)
    np.testing.assert_array_equal(hard.data, discretize(hard.data))
    syms = sender.symbols(x)
    np.testing.assert_array_equal(one_hot(syms, 8), hard.data)


def test_game_agents_shared_encoder_is_one_object():
    shared = GameAgents(SMALL, ChannelConfig(vocab_size=8), derive_rng(0, "m"),
                        shared_encoder=True)
    split = GameAgents(SMALL, ChannelConfig(vocab_size=8), derive_rng(0, "m"),
                       shared_encoder=False)
    assert shared.sender.encoder is shared.receiver.encoder
    assert split.sender.encoder is not split.receiver.encoder
    # the shared model deduplicates encoder parameters in its state dict
    assert len(shared.state_arrays()) < len(split.state_arrays())


def test_receiver_scores_and_game_forward():
    model = GameAgents(SMALL, ChannelConfig(vocab_size=8), derive_rng(3, "m"))
    x = Tensor(_images(n=4))
    msg, _ = model.sender.forward(x, rng=derive_rng(4, "g"))
    probs = model.receiver.forward(Tensor(msg.data[0]), x, cosine_temperature=0.1)
    assert probs.shape == (4,)
    np.testing.assert_allclose(probs.data.sum(), 1.0, atol=1e-12)
    scores = model.receiver.score_matrix(msg, x, cosine_temperature=0.1)
    assert scores.shape == (4, 4)
    # cosine scaled by 1/tau: |score| <= 1/tau
    assert np.abs(scores.data).max() <= 1.0 / 0.1 + 1e-9


def test_state_roundtrip_and_missing_keys():
    model = GameAgents(SMALL, ChannelConfig(vocab_size=8), derive_rng(5, "m"))
    arrays = model.state_arrays()
    clone = GameAgents(SMALL, ChannelConfig(vocab_size=8), derive_rng(6, "m"))
    x = Tensor(_images())
    assert not np.array_equal(clone.sender.logits(x).data, model.sender.logits(x).data)
    clone.load_state_arrays(arrays)
    np.testing.assert_array_equal(clone.sender.logits(x).data,
                                  model.sender.logits(x).data)
    # a shared-encoder state dict cannot fill a two-encoder model
    shared = GameAgents(SMALL, ChannelConfig(vocab_size=8), derive_rng(7, "m"),
                        shared_encoder=True)
    with pytest.raises(ValueError, match="uninitialized"):
        clone.load_state_arrays(shared.state_arrays())


def test_simclr_net_shapes():
    net = SimCLRNet(SMALL, vocab_size=8, rng=derive_rng(8, "c"))
    x = Tensor(_images(n=4))
    s, z = net.forward(x)
    assert s.shape == (4, 8) and z.shape == (4, 16)
    syms = net.symbols(x)
    assert syms.shape == (4,) and (syms < 8).all()
    # the projection accepts a hard one-hot in place of scores
    hard = Tensor(one_hot(syms, 8))
    zz = net.projection.forward(hard)
    assert zz.shape == (4, 16)


def test_extract_features_matches_eval_forward_and_restores_mode():
    model = GameAgents(SMALL, ChannelConfig(vocab_size=8), derive_rng(9, "m"))
    model.train()
    imgs = _images(n=5)
    feats = extract_features(model.sender.encoder, imgs, batch_size=2)
    assert feats.shape == (5, 16)
    assert model.sender.encoder.training  # restored
    model.eval()
    expect = model.sender.encoder.forward(Tensor(imgs)).data
    np.testing.assert_allclose(feats, expect, atol=1e-12)
