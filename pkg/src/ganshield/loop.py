"""Closed-loop wiring: simulator, communication layer, attacks, defense.

run_closed_loop composes the pieces owned by the other modules into one
experiment: per-link delivery delays, the attack layer corrupting what each
receiver sees, per-receiver window buffers, and either plain state feedback
or the full detect/identify/impute/switch pipeline at every control step.
Ground-truth corruption masks are recorded alongside so evaluations can score
detection and identification against what actually happened.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackScenario, CommLink, apply_attack, realize_delay_steps
from .defense import DefenseRecord, DefenseState, defend_step
from .errors import ConfigurationError
from .grid import GridModel, Trajectory, simulate
from .lqr import control_nominal


@dataclass
class DefenseSetup:
    """Everything a defended receiver needs at run time."""

    model: object
    thresholds: np.ndarray
    eps: float = 0.5
    d: int = 4
    hold_steps: int = 0
    receivers: tuple[int, ...] | None = None  # None protects everyone


@dataclass
class LoopResult:
    trajectory: Trajectory
    records: dict[int, list[DefenseRecord]] = field(default_factory=dict)
    truth: dict[int, list[tuple[int, ...]]] = field(default_factory=dict)
    times: np.ndarray | None = None
    delay_steps: dict[tuple[int, int], int] = field(default_factory=dict)


def run_closed_loop(
    model: GridModel,
    K: np.ndarray,
    links: list[CommLink] | None = None,
    scenario: AttackScenario | None = None,
    defense: DefenseSetup | None = None,
    horizon: float = 10.0,
    seed: int = 0,
    peaks: np.ndarray | None = None,
    A: np.ndarray | None = None,
    x_o: np.ndarray | None = None,
    x0: np.ndarray | None = None,
    provenance: dict | None = None,
) -> LoopResult:
    """Simulate the grid under feedback with optional attack and defense.

    Each control step every receiver sees its own block instantly and remote
    blocks through their links (delayed by the per-link realized delay, then
    corrupted by the scenario). Defended receivers run the full online
    pipeline on their last w received samples; everyone else applies plain
    feedback to whatever arrived.
    """
    K = np.asarray(K, dtype=np.float64)
    if K.shape != (model.n_gen, model.n_x):
        raise ConfigurationError(f"gain must be (n_gen, n_x), got {K.shape}")
    x_o_eff = model.x_o if x_o is None else np.asarray(x_o, dtype=np.float64)
    links = list(links) if links else []
    slices = model.block_slices()
    n_gen = model.n_gen

    if scenario is not None and scenario.kind == "fdi" and peaks is None:
        raise ConfigurationError("FDI scenarios need peak amplitudes for the bias scale")
    signs = scenario.signs(model.n_x) if scenario is not None else None

    delay_rng = np.random.default_rng(seed)
    delay_steps = {
        (lk.sender, lk.receiver): realize_delay_steps(lk, model.dt, delay_rng)
        for lk in links
    }

    protected: tuple[int, ...] = ()
    if defense is not None:
        protected = (
            tuple(range(n_gen)) if defense.receivers is None else tuple(defense.receivers)
        )
        w = defense.model.hyper.w
        states = {
            j: DefenseState(
                d=defense.d,
                eps=defense.eps,
                thresholds=np.asarray(defense.thresholds, dtype=np.float64),
                hold_steps=defense.hold_steps,
            )
            for j in protected
        }
        buffers = {j: deque(maxlen=w) for j in protected}
        truth_buffers = {j: deque(maxlen=w) for j in protected}
        oracle = hasattr(defense.model, "set_truth")

    records: dict[int, list[DefenseRecord]] = {j: [] for j in protected}
    truth: dict[int, list[tuple[int, ...]]] = {j: [] for j in range(n_gen)}
    times: list[float] = []
    step_truth: dict[int, np.ndarray] = {}
    step_clean: dict[int, np.ndarray] = {}

    def comm(step, t, history):
        current = history[:, step]
        received = np.tile(current, (n_gen, 1))
        for lk in links:
            blk = slices[lk.sender]
            received[lk.receiver, blk] = history[
                blk, max(0, step - delay_steps[(lk.sender, lk.receiver)])
            ]
        times.append(t)
        for r in range(n_gen):
            step_clean[r] = received[r].copy()
            if scenario is None:
                mask = np.ones(model.n_x)
            else:
                received[r], mask = apply_attack(
                    received[r], scenario, r, t, slices, peaks=peaks, signs=signs
                )
            attacked_now = tuple(
                i for i, blk in enumerate(slices) if np.any(mask[blk] == 0.0)
            )
            step_truth[r] = mask
            truth[r].append(attacked_now)
        return received

    def controller(t, received):
        du = np.zeros(n_gen)
        for j in range(n_gen):
            if defense is None or j not in protected:
                du[j] = control_nominal(K[j], received[j], x_o_eff)
                continue
            buffers[j].append(received[j].copy())
            truth_buffers[j].append(step_clean[j])
            if len(buffers[j]) < w:
                du[j] = control_nominal(K[j], received[j], x_o_eff)
                continue
            window = np.stack(buffers[j], axis=1)
            if oracle:
                defense.model.set_truth(
                    np.stack(truth_buffers[j], axis=1),
                    under_attack=bool(np.any(step_truth[j] == 0.0)),
                )
            du[j], _, rec = defend_step(
                states[j], defense.model, window, K[j], x_o_eff, model.block_sizes, t=t
            )
            records[j].append(rec)
        return du

    traj = simulate(
        model,
        controller,
        comm=comm,
        horizon=horizon,
        seed=seed,
        x0=x0,
        A=A,
        x_o=x_o,
        provenance=provenance,
    )
    return LoopResult(
        trajectory=traj,
        records=records,
        truth=truth,
        times=np.array(times),
        delay_steps=delay_steps,
    )


def deviation_energy(traj: Trajectory, t_from: float = 0.0) -> float:
    """Integral of the squared deviation norm from t_from to the end."""
    mask = traj.t >= t_from
    dev = traj.deviations[:, mask]
    return float(np.sum(dev * dev) * traj.dt)


def detection_latency(
    records: list[DefenseRecord], onset: float
) -> float | None:
    """Seconds from onset to the first post-onset alarm; None if never."""
    for rec in records:
        if rec.t >= onset and rec.mode == "resilient":
            return rec.t - onset
    return None


def false_alarm_rate(records: list[DefenseRecord]) -> float:
    """Fraction of steps spent in resilient mode (healthy runs only)."""
    if not records:
        return 0.0
    return sum(r.mode == "resilient" for r in records) / len(records)


def identification_counts(
    records: list[DefenseRecord],
    truth: list[tuple[int, ...]],
    times: np.ndarray,
    t_from: float,
) -> tuple[int, int, int]:
    """Per-step (tp, fp, fn) of the identified sender sets against truth.

    Aligns diagnostics with ground truth by time stamp and scores every
    post-onset step. Steps where nothing was flagged and nothing was attacked
    contribute to neither numerator.
    """
    truth_at = dict(zip(np.round(times, 9), truth))
    tp = fp = fn = 0
    for rec in records:
        if rec.t < t_from:
            continue
        actual = set(truth_at.get(round(rec.t, 9), ()))
        flagged = set(rec.attacked)
        tp += len(flagged & actual)
        fp += len(flagged - actual)
        fn += len(actual - flagged)
    return tp, fp, fn


def identification_scores(
    records: list[DefenseRecord],
    truth: list[tuple[int, ...]],
    times: np.ndarray,
    t_from: float,
) -> tuple[float, float]:
    """Micro-averaged precision and recall over post-onset steps."""
    tp, fp, fn = identification_counts(records, truth, times, t_from)
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return precision, recall
