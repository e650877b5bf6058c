"""Adam with support for freezing individual output channels.

Masked entries are never touched: value, first and second moment all keep
their exact bit patterns, so lifting a mask later cannot cause a stale-moment
jump and frozen filters hash identically before and after training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, UsageError
from .layers import Param


@dataclass(frozen=True)
class AdamHyper:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigurationError("Adam betas must lie in (0, 1)")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ConfigurationError("Adam learning rate and epsilon must be positive")


def adam_step(params: list[Param], hyper: AdamHyper, t: int) -> None:
    """One bias-corrected Adam update over every unmasked element.

    ``t`` is the 1-based step index used for bias correction.
    """
    if t < 1:
        raise UsageError(f"Adam step index must be >= 1, got {t}")
    bc1 = 1.0 - hyper.beta1 ** t
    bc2 = 1.0 - hyper.beta2 ** t
    for p in params:
        if p.adam_m.shape != p.value.shape or p.adam_v.shape != p.value.shape:
            raise UsageError(f"uninitialized Adam moments for {p.name}")
        if p.mask is not None and not p.mask.any():
            continue
        g = p.grad
        m_new = hyper.beta1 * p.adam_m + (1.0 - hyper.beta1) * g
        v_new = hyper.beta2 * p.adam_v + (1.0 - hyper.beta2) * (g * g)
        step = hyper.learning_rate * (m_new / bc1) / (np.sqrt(v_new / bc2) + hyper.epsilon)
        if p.mask is None:
            p.adam_m = m_new
            p.adam_v = v_new
            p.value -= step.astype(p.value.dtype)
        else:
            m = p.mask
            p.adam_m[m] = m_new[m]
            p.adam_v[m] = v_new[m]
            p.value[m] -= step[m].astype(p.value.dtype)


class Adam:
    """Stateful wrapper tracking the step counter."""

    def __init__(self, params: list[Param], hyper: AdamHyper = AdamHyper()):
        self.params = params
        self.hyper = hyper
        self.t = 0

    def step(self):
        self.t += 1
        adam_step(self.params, self.hyper, self.t)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
