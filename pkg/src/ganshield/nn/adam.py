"""Bias-corrected ADAM over a list of named parameter tensors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError
from .params import ParamTensor


@dataclass
class AdamState:
    """Moment accumulators mirroring one parameter list.

    One state drives one training run; shapes are pinned at construction and
    the step counter increases by exactly one per call to :func:`adam_step`.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")

    @classmethod
    def for_params(cls, params: list[ParamTensor], lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
        return state


def adam_step(params: list[ParamTensor], grads: list[np.ndarray], state: AdamState) -> None:
    """Apply one bias-corrected update in place.

    ``grads`` aligns with ``params`` element-wise; a non-finite gradient is
    reported with the offending parameter's name.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError(
            f"mismatched lengths: {len(params)} params, {len(grads)} grads, {len(state.m)} moments"
        )
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {p.name!r} shape {p.value.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {p.name!r}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p.value -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
