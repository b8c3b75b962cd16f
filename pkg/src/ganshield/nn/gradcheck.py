"""Central-difference verification of analytic gradients."""
from __future__ import annotations

import math

import numpy as np

from ..errors import NumericError
from .params import ParamTensor


def grad_check(
    loss_and_grads,
    params: list[ParamTensor],
    h: float = 1e-6,
    max_coords_per_param: int | None = None,
    seed: int = 0,
) -> float:
    """Compare analytic gradients against central finite differences.

    ``loss_and_grads(params)`` must return ``(loss, grads)`` with grads
    aligned to ``params``; it must be deterministic. Coordinates are sampled
    per parameter when ``max_coords_per_param`` caps them. Returns the max of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    loss, grads = loss_and_grads(params)
    if not math.isfinite(loss):
        raise NumericError("loss is non-finite at the evaluation point")
    rng = np.random.default_rng(seed)

    worst = 0.0
    for p, g in zip(params, grads):
        g = np.asarray(g, dtype=np.float64)
        flat_n = p.value.size
        if max_coords_per_param is not None and flat_n > max_coords_per_param:
            coords = rng.choice(flat_n, size=max_coords_per_param, replace=False)
        else:
            coords = np.arange(flat_n)
        flat = p.value.reshape(-1)
        gflat = g.reshape(-1)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + h
            lp, _ = loss_and_grads(params)
            flat[idx] = orig - h
            lm, _ = loss_and_grads(params)
            flat[idx] = orig
            if not (math.isfinite(lp) and math.isfinite(lm)):
                raise NumericError(f"non-finite loss while perturbing {p.name!r}")
            numeric = (lp - lm) / (2.0 * h)
            analytic = gflat[idx]
            denom = max(1e-8, abs(analytic) + abs(numeric))
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
