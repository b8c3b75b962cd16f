"""Communication links, delay realization, and FDI/DoS corruption.

Attacks act on sender->receiver links at generator-block granularity: a link
carries the sender's full state block, so corrupting the link corrupts that
block in the receiver's assembled view. Masks record ground truth with 1 for
healthy entries and 0 for attacked ones, constant within a block.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class CommLink:
    sender: int
    receiver: int
    mean_delay: float = 0.0
    jitter_fraction: float = 0.0

    def __post_init__(self):
        if self.mean_delay < 0:
            raise ConfigurationError("mean_delay must be non-negative")
        if not 0.0 <= self.jitter_fraction <= 1.0:
            raise ConfigurationError("jitter_fraction must lie in [0, 1]")


def realize_delay_steps(link: CommLink, dt: float, rng: np.random.Generator) -> int:
    """Draw the link's delay once and floor it to the simulation grid."""
    lo = link.mean_delay * (1.0 - link.jitter_fraction)
    hi = link.mean_delay * (1.0 + link.jitter_fraction)
    realized = lo if hi == lo else rng.uniform(lo, hi)
    return int(math.floor(realized / dt + 1e-12))


def deliver(history: np.ndarray, delay_steps: int, step: int) -> np.ndarray:
    """Sender state as seen at ``step`` through a ``delay_steps`` old channel.

    ``history`` has one column per completed step (column k = state at step
    k); times before the start clamp to the initial column.
    """
    if delay_steps < 0:
        raise ConfigurationError("delay_steps must be non-negative")
    return history[:, max(0, step - delay_steps)].copy()


@dataclass(frozen=True)
class AttackScenario:
    """One attack case: which links are hit, how, and when."""

    id: str
    links: tuple[tuple[int, int], ...]
    kind: str  # "dos" or "fdi"
    t_start: float
    t_end: float
    seed: int = 0
    bias_fraction: float = 0.0

    def __post_init__(self):
        if self.kind not in ("dos", "fdi"):
            raise ConfigurationError(f"unknown attack kind {self.kind!r}")
        if not self.t_start < self.t_end:
            raise ConfigurationError("t_start must precede t_end")
        if not 0.0 <= self.bias_fraction <= 1.0:
            raise ConfigurationError("bias_fraction must lie in [0, 1]")
        object.__setattr__(self, "links", tuple((int(s), int(r)) for s, r in self.links))

    def attacked_senders(self, receiver: int) -> tuple[int, ...]:
        return tuple(sorted({s for s, r in self.links if r == receiver}))

    def signs(self, n_x: int) -> np.ndarray:
        """Per-state bias signs in {-1,+1}, drawn once from the scenario seed."""
        rng = np.random.default_rng(self.seed)
        return rng.choice(np.array([-1.0, 1.0]), size=n_x)


def apply_attack(
    received: np.ndarray,
    scenario: AttackScenario,
    receiver: int,
    t: float,
    block_slices: list[slice],
    peaks: np.ndarray | None = None,
    signs: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Corrupt one receiver's assembled state vector.

    Returns (corrupted copy, ground-truth mask column). Outside the attack
    window the data is returned unchanged with an all-ones mask. DoS zeroes
    the attacked blocks in place (the receiver-side placeholder); FDI adds
    sign_k * bias_fraction * peak_k per attacked entry.
    """
    received = np.asarray(received, dtype=np.float64)
    mask = np.ones(received.shape[0])
    out = received.copy()
    senders = scenario.attacked_senders(receiver)
    if not senders or not (scenario.t_start <= t <= scenario.t_end):
        return out, mask
    if max(senders) >= len(block_slices):
        raise ConfigurationError(
            f"attacked sender {max(senders)} outside the {len(block_slices)}-generator model"
        )
    if scenario.kind == "fdi":
        if peaks is None:
            raise ValueError("FDI corruption needs healthy peak amplitudes")
        if signs is None:
            signs = scenario.signs(received.shape[0])
    for s in senders:
        blk = block_slices[s]
        if scenario.kind == "dos":
            out[blk] = 0.0
        else:
            out[blk] += signs[blk] * scenario.bias_fraction * peaks[blk]
        mask[blk] = 0.0
    return out, mask


def compute_peak_amplitudes(trajectories) -> np.ndarray:
    """Per-state max |x - x_o| over a collection of healthy trajectories."""
    peaks = None
    for traj in trajectories:
        m = np.max(np.abs(traj.deviations), axis=1)
        peaks = m if peaks is None else np.maximum(peaks, m)
    if peaks is None:
        raise ValueError("need at least one trajectory")
    return peaks


def build_training_masks(n_gen: int, n_scenarios: int, seed: int) -> list[np.ndarray]:
    """Generator-level masks: all-ones first, then distinct random subsets.

    Each non-trivial mask zeroes a seeded random non-empty subset of
    generator blocks of size at most ceil(n_gen/3). Returned masks have one
    entry per generator (1 = healthy), ready for block expansion.
    """
    if n_scenarios < 1:
        raise ConfigurationError("n_scenarios must be >= 1")
    max_size = max(1, math.ceil(n_gen / 3))
    available = sum(math.comb(n_gen, k) for k in range(1, max_size + 1))
    if n_scenarios - 1 > available:
        raise ConfigurationError(
            f"{n_scenarios - 1} distinct masks requested but only {available} exist"
        )
    masks = [np.ones(n_gen)]
    if n_scenarios == 1:
        return masks
    rng = np.random.default_rng(seed)
    all_subsets = []
    for k in range(1, max_size + 1):
        all_subsets.extend(combinations(range(n_gen), k))
    order = rng.permutation(len(all_subsets))
    for idx in order[: n_scenarios - 1]:
        m = np.ones(n_gen)
        m[list(all_subsets[idx])] = 0.0
        masks.append(m)
    return masks


def expand_mask(gen_mask: np.ndarray, block_sizes: list[int], w: int) -> np.ndarray:
    """Expand a generator-level mask to a block-constant (n_x, w) matrix."""
    cols = np.repeat(np.asarray(gen_mask, dtype=np.float64), block_sizes)
    return np.tile(cols[:, None], (1, w))


# ---------------------------------------------------------------------------
# Scenario file

def save_scenarios(links: list[CommLink], scenarios: list[AttackScenario], path: str | Path) -> None:
    doc = {
        "links": [
            {
                "sender": l.sender,
                "receiver": l.receiver,
                "mean_delay": l.mean_delay,
                "jitter_fraction": l.jitter_fraction,
            }
            for l in links
        ],
        "scenarios": [
            {
                "id": s.id,
                "links": [list(pair) for pair in s.links],
                "kind": s.kind,
                "t_start": s.t_start,
                "t_end": s.t_end,
                "seed": s.seed,
                "bias_fraction": s.bias_fraction,
            }
            for s in scenarios
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_scenarios(path: str | Path) -> tuple[list[CommLink], list[AttackScenario]]:
    doc = json.loads(Path(path).read_text())
    links = [
        CommLink(
            sender=int(l["sender"]),
            receiver=int(l["receiver"]),
            mean_delay=float(l.get("mean_delay", 0.0)),
            jitter_fraction=float(l.get("jitter_fraction", 0.0)),
        )
        for l in doc["links"]
    ]
    scenarios = [
        AttackScenario(
            id=str(s["id"]),
            links=tuple((int(a), int(b)) for a, b in s["links"]),
            kind=str(s["kind"]),
            t_start=float(s["t_start"]),
            t_end=float(s["t_end"]),
            seed=int(s.get("seed", 0)),
            bias_fraction=float(s.get("bias_fraction", 0.0)),
        )
        for s in doc["scenarios"]
    ]
    return links, scenarios
