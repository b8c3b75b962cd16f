"""A single-layer LSTM with a hand-derived backward pass.

Gate order is fixed as input / forget / cell / output: the stacked weight
matrices hold the four gates in that row order, and the checkpoint format
relies on it. Forward passes cache every activation the backward pass needs,
so gradients are exact (verified against central differences in the tests).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError
from .params import ParamTensor, uniform_init


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Stable piecewise form; plain 1/(1+exp(-x)) overflows for large -x.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class LstmParams:
    """Stacked gate parameters: W (4h, in), U (4h, h), b (4h,)."""

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        four_h, n_in = self.W.shape
        if four_h % 4 != 0:
            raise ValueError(f"W must have 4*hidden rows, got {four_h}")
        h = four_h // 4
        if self.U.shape != (four_h, h):
            raise ValueError(f"U shape {self.U.shape} inconsistent with W {self.W.shape}")
        if self.b.shape != (four_h,):
            raise ValueError(f"b shape {self.b.shape} inconsistent with W {self.W.shape}")

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.W.shape[0] // 4

    def tensors(self, prefix: str) -> list[ParamTensor]:
        return [
            ParamTensor(f"{prefix}.W", self.W),
            ParamTensor(f"{prefix}.U", self.U),
            ParamTensor(f"{prefix}.b", self.b),
        ]

    def zeros_like(self) -> "LstmParams":
        return LstmParams(np.zeros_like(self.W), np.zeros_like(self.U), np.zeros_like(self.b))


def init_lstm(rng: np.random.Generator, input_size: int, hidden_size: int) -> LstmParams:
    """Uniform fan-in init; the forget-gate bias starts at +1.0 so early
    training does not erase the cell state."""
    W = uniform_init(rng, (4 * hidden_size, input_size), input_size)
    U = uniform_init(rng, (4 * hidden_size, hidden_size), hidden_size)
    b = np.zeros(4 * hidden_size)
    b[hidden_size : 2 * hidden_size] = 1.0
    return LstmParams(W, U, b)


@dataclass
class LstmStepCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tc: np.ndarray


@dataclass
class LstmSequenceCache:
    steps: list[LstmStepCache] = field(default_factory=list)


def lstm_cell(params: LstmParams, x: np.ndarray, h: np.ndarray, c: np.ndarray):
    """One LSTM step on a batch.

    x: (B, in), h and c: (B, hidden). Returns (h_next, c_next, cache).
    """
    H = params.hidden_size
    if x.shape[1] != params.input_size:
        raise ValueError(f"input width {x.shape[1]} != input_size {params.input_size}")
    if h.shape[1] != H or c.shape[1] != H:
        raise ValueError("state width inconsistent with hidden_size")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(h)) and np.all(np.isfinite(c))):
        raise NumericError("non-finite input to LSTM cell")
    z = x @ params.W.T + h @ params.U.T + params.b
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H : 2 * H])
    g = np.tanh(z[:, 2 * H : 3 * H])
    o = sigmoid(z[:, 3 * H :])
    c_next = f * c + i * g
    tc = np.tanh(c_next)
    h_next = o * tc
    return h_next, c_next, LstmStepCache(x, h, c, i, f, g, o, c_next, tc)


def lstm_cell_backward(
    params: LstmParams,
    cache: LstmStepCache,
    dh: np.ndarray,
    dc: np.ndarray,
    grads: LstmParams,
):
    """Backward through one step; accumulates into ``grads``.

    Returns (dx, dh_prev, dc_prev) for the chain to the previous step.
    """
    do = dh * cache.tc
    dc_total = dc + dh * cache.o * (1.0 - cache.tc**2)
    di = dc_total * cache.g
    df = dc_total * cache.c_prev
    dg = dc_total * cache.i
    dc_prev = dc_total * cache.f

    dz_i = di * cache.i * (1.0 - cache.i)
    dz_f = df * cache.f * (1.0 - cache.f)
    dz_g = dg * (1.0 - cache.g**2)
    dz_o = do * cache.o * (1.0 - cache.o)
    dz = np.concatenate([dz_i, dz_f, dz_g, dz_o], axis=1)

    grads.W += dz.T @ cache.x
    grads.U += dz.T @ cache.h_prev
    grads.b += dz.sum(axis=0)

    dx = dz @ params.W
    dh_prev = dz @ params.U
    return dx, dh_prev, dc_prev


def lstm_forward(params: LstmParams, inputs: np.ndarray, initial_state=None):
    """Run the LSTM over a whole sequence.

    inputs: (T, in) for one sequence or (T, B, in) for a batch. Returns the
    hidden sequence (same leading layout), the final (h, c), and a cache that
    suffices for an exact backward pass.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    single = inputs.ndim == 2
    if single:
        inputs = inputs[:, None, :]
    if inputs.ndim != 3:
        raise ValueError(f"inputs must be (T, in) or (T, B, in), got shape {inputs.shape}")
    T, B, _ = inputs.shape
    H = params.hidden_size
    if initial_state is None:
        h = np.zeros((B, H))
        c = np.zeros((B, H))
    else:
        h0, c0 = initial_state
        h = np.atleast_2d(np.asarray(h0, dtype=np.float64)).copy()
        c = np.atleast_2d(np.asarray(c0, dtype=np.float64)).copy()
        if h.shape != (B, H) or c.shape != (B, H):
            raise ValueError("initial state shape inconsistent with batch/hidden size")

    cache = LstmSequenceCache()
    hs = np.zeros((T, B, H))
    for t in range(T):
        h, c, step = lstm_cell(params, inputs[t], h, c)
        hs[t] = h
        cache.steps.append(step)
    if single:
        return hs[:, 0, :], (h[0], c[0]), cache
    return hs, (h, c), cache


def lstm_backward(
    params: LstmParams,
    cache: LstmSequenceCache,
    dhs: np.ndarray | None = None,
    dh_final: np.ndarray | None = None,
    dc_final: np.ndarray | None = None,
):
    """Backward through a sequence run from ``lstm_forward``.

    dhs carries per-step upstream gradients (T, B, H) or (T, H); dh_final and
    dc_final add gradients on the final state. Returns (grads, dinputs, dh0, dc0).
    """
    if not cache.steps:
        raise ValueError("empty cache: nothing to backpropagate")
    T = len(cache.steps)
    B = cache.steps[0].x.shape[0]
    H = params.hidden_size

    if dhs is not None:
        dhs = np.asarray(dhs, dtype=np.float64)
        if dhs.ndim == 2:
            dhs = dhs[:, None, :]
        if dhs.shape != (T, B, H):
            raise ValueError(f"dhs shape {dhs.shape} does not match cache ({T},{B},{H})")

    grads = params.zeros_like()
    dh = np.zeros((B, H)) if dh_final is None else np.atleast_2d(dh_final).astype(float).copy()
    dc = np.zeros((B, H)) if dc_final is None else np.atleast_2d(dc_final).astype(float).copy()
    dinputs = np.zeros((T, B, params.input_size))
    for t in range(T - 1, -1, -1):
        if dhs is not None:
            dh = dh + dhs[t]
        dx, dh, dc = lstm_cell_backward(params, cache.steps[t], dh, dc, grads)
        dinputs[t] = dx
    return grads, dinputs, dh, dc
