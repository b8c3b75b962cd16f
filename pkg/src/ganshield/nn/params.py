"""Named parameter tensors and initialization helpers.

All arithmetic in this package is 64-bit; parameters are plain numpy arrays
wrapped with a name so optimizers and checkpoints can refer to them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError


@dataclass
class ParamTensor:
    """A named, mutable parameter array.

    The array is shared, not copied: optimizers update ``value`` in place and
    the owning layer sees the change.
    """

    name: str
    value: np.ndarray

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if not np.all(np.isfinite(self.value)):
            raise NumericError(f"parameter {self.name!r} contains non-finite entries")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], the package-wide default."""
    if fan_in <= 0:
        raise ValueError(f"fan_in must be positive, got {fan_in}")
    bound = 1.0 / np.sqrt(float(fan_in))
    return rng.uniform(-bound, bound, size=shape)
