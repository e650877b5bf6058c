"""Layer specifications and stateful layer objects built from them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigurationError
from . import functional as F

LAYER_KINDS = ("conv2d", "maxpool", "batchnorm", "relu", "dense", "dropout",
               "global_avg_pool", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer.

    Only the fields relevant to ``kind`` are meaningful: conv2d uses
    (kernel_size, out_channels, stride, padding), maxpool (kernel_size,
    stride), dense (out_dim), dropout (drop_p).
    """

    kind: str
    kernel_size: int = 0
    out_channels: int = 0
    stride: int = 1
    padding: int = 0
    out_dim: int = 0
    drop_p: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d":
            if self.kernel_size < 1 or self.out_channels < 1 or self.stride < 1 or self.padding < 0:
                raise ConfigurationError(f"bad conv2d spec: {self}")
        if self.kind == "maxpool" and self.kernel_size < 1:
            raise ConfigurationError(f"bad maxpool spec: {self}")
        if self.kind == "dense" and self.out_dim < 1:
            raise ConfigurationError(f"bad dense spec: {self}")
        if self.kind == "dropout" and not 0.0 <= self.drop_p < 1.0:
            raise ConfigurationError(f"bad dropout spec: {self}")

    _FIELDS_BY_KIND = {
        "conv2d": ("kernel_size", "out_channels", "stride", "padding"),
        "maxpool": ("kernel_size", "stride"),
        "dense": ("out_dim",),
        "dropout": ("drop_p",),
    }

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for key in self._FIELDS_BY_KIND.get(self.kind, ()):
            d[key] = getattr(self, key)
        return d

    @staticmethod
    def from_dict(d: dict) -> "LayerSpec":
        return LayerSpec(**d)


@dataclass
class Param:
    """A trainable tensor with its gradient, Adam moments and freeze mask."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)
    mask: Optional[np.ndarray] = None  # bool, True = trainable; None = all trainable

    def __post_init__(self):
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0


def _kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int,
                     dtype) -> np.ndarray:
    bound = np.sqrt(2.0) * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    """Base class: owns its spec, params and the last forward cache."""

    def __init__(self, spec: LayerSpec, name: str):
        self.spec = spec
        self.name = name
        self.params: list[Param] = []
        self._cache = None

    def forward(self, x, mode, rng):  # pragma: no cover - abstract
        raise NotImplementedError

    def backward(self, grad_out):  # pragma: no cover - abstract
        raise NotImplementedError

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Non-trainable state that must survive checkpointing."""
        return {}

    def out_channels(self) -> int | None:
        return None


class Conv2d(Layer):
    def __init__(self, spec, name, in_channels, rng, dtype):
        super().__init__(spec, name)
        k, f = spec.kernel_size, spec.out_channels
        w = _kaiming_uniform(rng, (f, in_channels, k, k), in_channels * k * k, dtype)
        self.weight = Param(f"{name}.weight", w)
        self.bias = Param(f"{name}.bias", np.zeros(f, dtype=dtype))
        self.params = [self.weight, self.bias]
        self.need_grad_input = True  # cleared for a network's first layer

    def forward(self, x, mode, rng):
        out, self._cache = F.conv2d_forward(
            x, self.weight.value, self.bias.value, self.spec.stride, self.spec.padding)
        return out

    def backward(self, grad_out):
        grad_x, gw, gb = F.conv2d_backward(self._cache, grad_out, self.need_grad_input)
        self.weight.grad += gw
        self.bias.grad += gb
        return grad_x

    def out_channels(self):
        return self.spec.out_channels


class MaxPool(Layer):
    def forward(self, x, mode, rng):
        out, self._cache = F.maxpool_forward(x, self.spec.kernel_size, self.spec.stride)
        return out

    def backward(self, grad_out):
        return F.maxpool_backward(self._cache, grad_out)


class BatchNorm(Layer):
    """Channel-wise batchnorm; ``freeze_stats`` pins the running estimates."""

    def __init__(self, spec, name, num_features, dtype, momentum=0.1, eps=1e-5):
        super().__init__(spec, name)
        self.gamma = Param(f"{name}.gamma", np.ones(num_features, dtype=dtype))
        self.beta = Param(f"{name}.beta", np.zeros(num_features, dtype=dtype))
        self.params = [self.gamma, self.beta]
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.freeze_stats = False

    def forward(self, x, mode, rng):
        out, self._cache, self.running_mean, self.running_var = F.batchnorm_forward(
            x, self.gamma.value, self.beta.value, self.running_mean, self.running_var,
            mode, self.momentum, self.eps, update_stats=not self.freeze_stats)
        return out

    def backward(self, grad_out):
        grad_x, gg, gb = F.batchnorm_backward(self._cache, grad_out)
        self.gamma.grad += gg
        self.beta.grad += gb
        return grad_x

    def state_arrays(self):
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}


class ReLU(Layer):
    def forward(self, x, mode, rng):
        out, self._cache = F.relu_forward(x)
        return out

    def backward(self, grad_out):
        return F.relu_backward(self._cache, grad_out)


class Dense(Layer):
    def __init__(self, spec, name, in_dim, rng, dtype):
        super().__init__(spec, name)
        w = _kaiming_uniform(rng, (in_dim, spec.out_dim), in_dim, dtype)
        self.weight = Param(f"{name}.weight", w)
        self.bias = Param(f"{name}.bias", np.zeros(spec.out_dim, dtype=dtype))
        self.params = [self.weight, self.bias]

    def forward(self, x, mode, rng):
        out, self._cache = F.dense_forward(x, self.weight.value, self.bias.value)
        return out

    def backward(self, grad_out):
        grad_x, gw, gb = F.dense_backward(self._cache, grad_out)
        self.weight.grad += gw
        self.bias.grad += gb
        return grad_x


class Dropout(Layer):
    def forward(self, x, mode, rng):
        out, self._cache = F.dropout_forward(x, self.spec.drop_p, mode, rng)
        return out

    def backward(self, grad_out):
        return F.dropout_backward(self._cache, grad_out)


class GlobalAvgPool(Layer):
    def forward(self, x, mode, rng):
        out, self._cache = F.global_avg_pool_forward(x)
        return out

    def backward(self, grad_out):
        return F.global_avg_pool_backward(self._cache, grad_out)


class Softmax(Layer):
    """Output marker.  Training couples softmax with the loss; forward here
    produces probabilities for inference paths."""

    def forward(self, x, mode, rng):
        return F.softmax(x)

    def backward(self, grad_out):
        raise ConfigurationError("softmax output layer has no standalone backward; "
                                 "use softmax_xent on the logits")
