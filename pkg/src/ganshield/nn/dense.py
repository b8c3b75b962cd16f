"""Affine layer y = x W^T + b with explicit backward."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParamTensor, uniform_init


@dataclass
class DenseParams:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError(f"inconsistent dense shapes W={self.W.shape} b={self.b.shape}")

    def tensors(self, prefix: str) -> list[ParamTensor]:
        return [ParamTensor(f"{prefix}.W", self.W), ParamTensor(f"{prefix}.b", self.b)]

    def zeros_like(self) -> "DenseParams":
        return DenseParams(np.zeros_like(self.W), np.zeros_like(self.b))


def init_dense(rng: np.random.Generator, input_size: int, output_size: int) -> DenseParams:
    return DenseParams(uniform_init(rng, (output_size, input_size), input_size), np.zeros(output_size))


def dense_forward(params: DenseParams, x: np.ndarray) -> np.ndarray:
    """x: (B, in) -> (B, out)."""
    if x.shape[1] != params.W.shape[1]:
        raise ValueError(f"input width {x.shape[1]} != {params.W.shape[1]}")
    return x @ params.W.T + params.b


def dense_backward(params: DenseParams, x: np.ndarray, dy: np.ndarray, grads: DenseParams) -> np.ndarray:
    """Accumulate parameter gradients for a forward call on x; returns dx."""
    grads.W += dy.T @ x
    grads.b += dy.sum(axis=0)
    return dy @ params.W
