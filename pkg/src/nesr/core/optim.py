"""Adam optimizer with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from nesr.core.tensor import unwrap
from nesr.errors import ConfigurationError


@dataclass
class AdamState:
    """First/second moment buffers keyed by parameter name."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigurationError(f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.lr <= 0:
            raise ConfigurationError(f"Adam learning rate must be positive, got {self.lr}")


def adam_step(params: dict, grads: dict, state: AdamState, lr: float | None = None) -> None:
    """Apply one bias-corrected Adam update in place.

    ``params`` maps names to arrays (or Tensors); ``grads`` maps the same
    names to gradient arrays. Parameters with no gradient entry are skipped
    but their moments still decay.
    """
    lr = state.lr if lr is None else lr
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for name, p in params.items():
        arr = unwrap(p)
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(arr)
        if g.shape != arr.shape:
            raise ConfigurationError(f"adam_step: grad for {name!r} has shape {g.shape}, param {arr.shape}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(arr)
            v = np.zeros_like(arr)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / corr1
        v_hat = v / corr2
        arr -= (lr * m_hat / (np.sqrt(v_hat) + state.eps_opt)).astype(arr.dtype, copy=False)
