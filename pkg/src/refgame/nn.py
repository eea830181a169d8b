"""Small layer library on top of the autodiff core."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Base class: walks attributes to collect parameters and buffers.

    Attribute insertion order is the canonical parameter order, so layer
    construction order fixes checkpoint layout and optimizer order.
    """

    def __init__(self):
        self.training = True
        self._buffer_names: tuple[str, ...] = ()

    def submodules(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in self.__dict__.items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self.__dict__.items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, sub in self.submodules():
            yield from sub.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffer_names:
            yield prefix + name, getattr(self, name)
        for name, sub in self.submodules():
            yield from sub.named_buffers(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def set_training(self, mode: bool) -> "Module":
        self.training = mode
        for _, sub in self.submodules():
            sub.set_training(mode)
        return self

    def train(self) -> "Module":
        return self.set_training(True)

    def eval(self) -> "Module":
        return self.set_training(False)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters and buffers as named arrays, aliases deduplicated."""
        out: dict[str, np.ndarray] = {}
        seen: set[int] = set()
        for name, p in self.named_parameters():
            if id(p) in seen:
                continue
            seen.add(id(p))
            out[name] = p.data
        for name, b in self.named_buffers():
            if id(b) in seen:
                continue
            seen.add(id(b))
            out[name] = b
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        expected = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        assigned: set[int] = set()
        for name, arr in arrays.items():
            if name in expected:
                target = expected[name].data
            elif name in buffers:
                target = buffers[name]
            else:
                raise KeyError(f"unknown checkpoint entry {name!r}")
            if target.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name!r}: {target.shape} vs {arr.shape}")
            target[...] = arr.astype(target.dtype, copy=False)
            assigned.add(id(target))
        # Aliased parameters (a shared encoder) are stored once but must all
        # land; anything untouched means the checkpoint and model disagree.
        missing = [name for name, p in expected.items() if id(p.data) not in assigned]
        missing += [name for name, b in buffers.items() if id(b) not in assigned]
        if missing:
            raise ValueError(f"checkpoint leaves state uninitialized: {sorted(missing)[:5]}")


class Linear(Module):
    """y = x @ W + b with W of shape (in_features, out_features)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype=np.float64):
        super().__init__()
        # He initialization: the layers here are followed by ReLU or batchnorm.
        std = np.sqrt(2.0 / in_features)
        self.weight = Tensor(rng.normal(0.0, std, size=(in_features, out_features)).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ops.add(ops.matmul(x, self.weight), self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 dtype=np.float64):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        std = np.sqrt(2.0 / fan_in)
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weight = Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        out = ops.conv2d(x, self.weight, stride=self.stride, padding=self.padding)
        return ops.add(out, ops.reshape(self.bias, (1, -1, 1, 1)))


class BatchNorm(Module):
    """Batch normalization over the rows of a BxD tensor."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float64):
        super().__init__()
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)
        self._buffer_names = ("running_mean", "running_var")
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             momentum=self.momentum, eps=self.eps, training=self.training)


class BatchNorm2d(BatchNorm):
    """Per-channel normalization of BxCxHxW maps over batch and space."""

    def forward(self, x: Tensor) -> Tensor:
        return ops.batchnorm2d(x, self.gamma, self.beta, self.running_mean,
                               self.running_var, momentum=self.momentum,
                               eps=self.eps, training=self.training)


class MLP(Module):
    """Two-layer MLP with batchnorm + ReLU after the first layer."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float64):
        super().__init__()
        self.fc1 = Linear(in_dim, hidden, rng, dtype=dtype)
        self.norm = BatchNorm(hidden, dtype=dtype)
        self.fc2 = Linear(hidden, out_dim, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2.forward(ops.relu(self.norm.forward(self.fc1.forward(x))))
