"""Referential communication game with a discrete symbol bottleneck.

A Sender names images with single symbols, a Receiver resolves them
against distractors, and both train end to end through a Gumbel-Softmax
channel.  Subpackages cover the numpy autodiff engine, the procedural
shape dataset, the contrastive baseline, protocol interpretability
metrics, linear probes, and the deterministic run pipeline behind the
``refgame`` command.
"""

__version__ = "0.1.0"
